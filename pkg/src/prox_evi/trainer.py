"""Training loop: sample once, take full-batch Adam steps, log errors, checkpoint."""

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .benchmarks import default_variant, get_benchmark
from .errors import TrainingError
from .network import init_net, predict, save_checkpoint
from .optimizer import Adam
from .problems import loss_total

log = logging.getLogger(__name__)

RUN_LOG_HEADER = ("epoch", "loss", "l2_rel", "linf_rel")
CHECKPOINT_NAME = "checkpoint.bin"


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on.

    Fields left as ``None`` take the benchmark's defaults when :meth:`resolve`
    is called; a resolved config has no ``None`` left except ``out_dir`` and
    ``batch_size``.
    """

    benchmark: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    epochs: Optional[int] = None
    eta: float = 1e-3
    lr: float = 1e-3
    loss_variant: Optional[str] = None
    train_size: Optional[int] = None
    test_size: Optional[int] = None
    boundary_size: Optional[int] = None
    hidden_layers: Optional[int] = None
    width: Optional[int] = None
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    wb: Optional[float] = None
    log_every: int = 100
    batch_size: Optional[int] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.epochs is not None and self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.log_every < 1:
            raise ValueError("log cadence must be at least 1")
        for name in ("train_size", "test_size", "batch_size", "hidden_layers", "width"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be positive")

    def resolve(self):
        bench = get_benchmark(self.benchmark, **self.params)
        hyper = bench.hyper
        variant = self.loss_variant
        if variant is None:
            variant = default_variant(bench)
        bench.resolve_case(variant)  # reject variants the benchmark does not support
        boundary_size = self.boundary_size
        if boundary_size is None:
            boundary_size = bench.contact_size if bench.contact_segment else (2 if bench.dim == 1 else 200)
        return replace(
            self,
            params=dict(self.params),
            epochs=hyper.epochs if self.epochs is None else self.epochs,
            loss_variant=variant,
            train_size=hyper.train_size if self.train_size is None else self.train_size,
            test_size=hyper.test_size if self.test_size is None else self.test_size,
            boundary_size=boundary_size,
            hidden_layers=hyper.hidden_layers if self.hidden_layers is None else self.hidden_layers,
            width=hyper.width if self.width is None else self.width,
            wb=(1.0 if self.wb is None else self.wb) if variant == "soft" else self.wb,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class LogRecord:
    epoch: int
    loss: float
    l2_rel: float
    linf_rel: float
    seconds: float = 0.0


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    train_hash: str = ""
    absolute_errors: bool = False

    def append(self, record):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("log epochs must increase")
        self.records.append(record)

    @property
    def final(self):
        return self.records[-1]

    def write_csv(self, path):
        # wall-clock stays out of the file so identical configs give identical bytes
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RUN_LOG_HEADER)
            for r in self.records:
                writer.writerow([r.epoch, repr(r.loss), repr(r.l2_rel), repr(r.linf_rel)])


class ErrorSummary(NamedTuple):
    l2: float
    linf: float
    absolute: bool = False


def relative_errors(predicted, exact):
    """Relative discrete L2 and max-norm errors.

    When the exact values are identically zero the absolute norms are
    returned instead and ``absolute`` is set.
    """
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    exact = np.asarray(exact, dtype=np.float64).ravel()
    if predicted.shape != exact.shape:
        raise ValueError("predicted and exact values differ in length")
    diff = predicted - exact
    l2_den = np.linalg.norm(exact)
    linf_den = np.max(np.abs(exact)) if exact.size else 0.0
    if l2_den == 0.0 or linf_den == 0.0:
        return ErrorSummary(float(np.linalg.norm(diff)), float(np.max(np.abs(diff), initial=0.0)), True)
    return ErrorSummary(float(np.linalg.norm(diff) / l2_den), float(np.max(np.abs(diff)) / linf_den))


def mean_relative_error(predicted, exact):
    """``mean |u - u_hat| / |u|`` over points with ``u != 0``."""
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    exact = np.asarray(exact, dtype=np.float64).ravel()
    keep = exact != 0
    return float(np.mean(np.abs(predicted[keep] - exact[keep]) / np.abs(exact[keep])))


def hash_points(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        if a is not None:
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()


@dataclass
class TrainingSet:
    interior: np.ndarray
    boundary: object = None

    def digest(self):
        return hash_points(self.interior, *(
            (self.boundary.points, self.boundary.normals) if self.boundary is not None else ()))


def _freeze(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


# independent random streams derived from the run seed
INIT_STREAM, INTERIOR_STREAM, BOUNDARY_STREAM, BATCH_STREAM = range(4)


def _stream(seed, which):
    return np.random.SeedSequence(seed, spawn_key=(which,))


def sample_training_set(bench, config):
    """Interior and boundary training points, drawn once from independent streams."""
    interior_seq = _stream(config.seed, INTERIOR_STREAM)
    boundary_seq = _stream(config.seed, BOUNDARY_STREAM)
    interior = _freeze(bench.domain.sample_interior(config.train_size, interior_seq))
    boundary = bench.training_boundary(config.loss_variant, config.boundary_size, boundary_seq)
    if boundary is not None:
        boundary.points = _freeze(boundary.points)
        boundary.normals = _freeze(boundary.normals)
    return TrainingSet(interior, boundary)


def init_parameters(bench, config):
    return init_net(bench.layer_sizes(config.hidden_layers, config.width), _stream(config.seed, INIT_STREAM))


@dataclass
class RunResult:
    config: RunConfig
    log: RunLog
    surrogate: object
    bench: object
    test_points: np.ndarray

    @property
    def net(self):
        return self.surrogate.net


def evaluate_errors(bench, surrogate, points):
    return relative_errors(predict(surrogate, points), bench.exact(points))


def _batches(n, batch_size, rng):
    if batch_size is None or batch_size >= n:
        return [None]
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def run(config):
    """Train one benchmark; returns a :class:`RunResult`.

    The loss column is the loss at the start of the logged epoch (it comes
    with the gradient for that step); the error columns are measured after
    the step, so the last row matches the saved checkpoint exactly.
    """
    config = config.resolve()
    bench = get_benchmark(config.benchmark, **config.params)
    problem = bench.make_problem(config.eta, config.loss_variant, config.w1, config.w2, config.w3, config.wb)
    net = init_parameters(bench, config)
    surrogate = bench.make_surrogate(net, config.loss_variant)
    train = sample_training_set(bench, config)
    digest = train.digest()
    test_points = bench.test_points(config.test_size)
    out = Path(config.out_dir) if config.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    run_log = RunLog(train_hash=digest)
    adam = Adam(net.n_params, lr=config.lr)
    theta = net.flat()
    batch_rng = np.random.default_rng(_stream(config.seed, BATCH_STREAM))
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        losses = []
        for idx in _batches(len(train.interior), config.batch_size, batch_rng):
            points = train.interior if idx is None else train.interior[idx]
            loss, grad = loss_total(problem, surrogate, points, train.boundary)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                _abort(out, surrogate, run_log, epoch)
            theta = adam.step(theta, grad)
            surrogate = surrogate.with_net(surrogate.net.with_flat(theta))
            losses.append(loss)
        if epoch == 1 or epoch % config.log_every == 0 or epoch == config.epochs:
            if train.digest() != digest:
                raise TrainingError("training set changed during the run", step=epoch)
            errs = evaluate_errors(bench, surrogate, test_points)
            run_log.absolute_errors = errs.absolute
            run_log.append(LogRecord(epoch, float(np.mean(losses)), errs.l2, errs.linf,
                                     time.perf_counter() - start))
            log.info("epoch %d loss %.6e l2_rel %.3e linf_rel %.3e", epoch, run_log.final.loss, errs.l2, errs.linf)

    result = RunResult(config, run_log, surrogate, bench, test_points)
    if out is not None:
        write_bundle(result, out)
    return result


def _abort(out, surrogate, run_log, epoch):
    if out is not None:
        save_checkpoint(surrogate.net, out / CHECKPOINT_NAME)
        run_log.write_csv(out / "run_log.csv")
    err = TrainingError(f"non-finite loss or gradient at epoch {epoch}", step=epoch)
    err.run_log = run_log
    err.net = surrogate.net
    raise err


def version_string():
    """``git describe`` of the source tree when available, else the package version."""
    import subprocess

    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5, check=True,
        ).stdout.strip()
        if described:
            return described
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__
    return __version__


def write_config(config, path):
    data = config.to_dict()
    data["version"] = version_string()
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_config(path):
    with open(path) as fh:
        data = json.load(fh)
    data.pop("version", None)
    return RunConfig.from_dict(data)


def write_solution(path, points, exact, pred):
    points = np.asarray(points)
    names = ["x"] if points.shape[1] == 1 else [f"x{i + 1}" for i in range(points.shape[1])]
    abs_err = np.abs(exact - pred)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["u_exact", "u_pred", "abs_err"])
        for p, e, u, a in zip(points, exact, pred, abs_err):
            writer.writerow([repr(float(c)) for c in p] + [repr(float(e)), repr(float(u)), repr(float(a))])


def write_bundle(result, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result.log.write_csv(out / "run_log.csv")
    write_config(result.config, out / "config.json")
    save_checkpoint(result.net, out / CHECKPOINT_NAME)
    pts = result.test_points
    write_solution(out / "solution.csv", pts, result.bench.exact(pts), predict(result.surrogate, pts))
