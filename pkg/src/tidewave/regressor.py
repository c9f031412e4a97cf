"""Water-level regression with a single hidden layer of 40 tanh units.

The training set is small (thousands of rows, tens of columns), so the
trainer is deliberately plain: full-batch gradient descent on mean squared
error with an adaptive step that halves after a loss increase (the step is
reverted) and grows by 5% after a decrease. Every numerical step is a single
numpy call, so a fixed seed and fixed data reproduce identical weights from
run to run. Targets are z-scored internally and predictions de-scaled, which
keeps the lone linear output unit well conditioned regardless of the tide
datum.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .features import StandardizationStats
from .util import NumericalError, ValidationError, require

HIDDEN_DEFAULT = 40


@dataclass(frozen=True)
class TrainConfig:
    learn_rate: float = 0.05
    max_epochs: int = 5000
    patience: int = 50
    grow: float = 1.05
    shrink: float = 0.5
    momentum: float = 0.0   # optional hook; 0 disables it

    def __post_init__(self):
        require(self.learn_rate > 0, "learn_rate must be positive")
        require(self.max_epochs >= 0, "max_epochs must be non-negative")
        require(self.patience >= 0, "patience must be non-negative")
        require(0 < self.shrink < 1 < self.grow, "need shrink < 1 < grow")
        require(0 <= self.momentum < 1, "momentum must be in [0, 1)")


@dataclass(frozen=True)
class FineTuneConfig:
    epochs: int = 200
    rate_scale: float = 0.1   # applied to the base learn rate
    base: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        require(self.epochs >= 0, "epochs must be non-negative")
        require(self.rate_scale > 0, "rate_scale must be positive")


@dataclass
class RegressorModel:
    w_hidden: np.ndarray        # (hidden, input_dim)
    b_hidden: np.ndarray        # (hidden,)
    w_out: np.ndarray           # (hidden,)
    b_out: float
    target_mean: float = 0.0
    target_std: float = 1.0
    input_columns: tuple[str, ...] | None = None
    feature_stats: StandardizationStats | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        h, d = self.w_hidden.shape
        require(self.b_hidden.shape == (h,) and self.w_out.shape == (h,),
                "inconsistent layer dimensions")
        require(bool(np.all(np.isfinite(self.w_hidden)))
                and bool(np.all(np.isfinite(self.b_hidden)))
                and bool(np.all(np.isfinite(self.w_out)))
                and math.isfinite(self.b_out), "weights must be finite")
        require(self.target_std > 0, "target std must be positive")
        if self.input_columns is not None:
            self.input_columns = tuple(self.input_columns)
            require(len(self.input_columns) == d,
                    "input_columns must match input_dim")

    @property
    def input_dim(self) -> int:
        return int(self.w_hidden.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.w_hidden.shape[0])

    def copy(self) -> "RegressorModel":
        return RegressorModel(self.w_hidden.copy(), self.b_hidden.copy(),
                              self.w_out.copy(), self.b_out,
                              self.target_mean, self.target_std,
                              self.input_columns, self.feature_stats,
                              dict(self.metadata))


def init_model(input_dim: int, hidden: int = HIDDEN_DEFAULT, seed: int = 42,
               input_columns=None) -> RegressorModel:
    """Uniform Glorot weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    require(input_dim >= 1, "input_dim must be >= 1")
    require(hidden >= 1, "hidden must be >= 1")
    rng = np.random.default_rng(seed)
    lim_h = math.sqrt(6.0 / (input_dim + hidden))
    lim_o = math.sqrt(6.0 / (hidden + 1))
    w_hidden = rng.uniform(-lim_h, lim_h, size=(hidden, input_dim))
    w_out = rng.uniform(-lim_o, lim_o, size=hidden)
    return RegressorModel(w_hidden, np.zeros(hidden), w_out, 0.0,
                          input_columns=input_columns,
                          metadata={"seed": seed})


def _forward_scaled(model: RegressorModel, x: np.ndarray) -> np.ndarray:
    h = np.tanh(x @ model.w_hidden.T + model.b_hidden)
    return h @ model.w_out + model.b_out


def forward(model: RegressorModel, x) -> np.ndarray:
    """Predicted water level in meters for rows ``x`` (or a single row)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    require(x.shape[1] == model.input_dim,
            f"expected {model.input_dim} features, got {x.shape[1]}")
    z = _forward_scaled(model, x)
    y = z * model.target_std + model.target_mean
    return y[0] if single else y


def _loss_and_grad(model, x, z_target, want_grad=True):
    n = x.shape[0]
    a = x @ model.w_hidden.T + model.b_hidden
    h = np.tanh(a)
    z = h @ model.w_out + model.b_out
    resid = z - z_target
    loss = float(np.mean(resid * resid))
    if not want_grad:
        return loss, None
    dz = (2.0 / n) * resid
    g_w_out = h.T @ dz
    g_b_out = float(np.sum(dz))
    dh = np.outer(dz, model.w_out)
    da = dh * (1.0 - h * h)
    g_w_hidden = da.T @ x
    g_b_hidden = da.sum(axis=0)
    return loss, (g_w_hidden, g_b_hidden, g_w_out, g_b_out)


def gradients(model: RegressorModel, x, y) -> tuple:
    """MSE gradients in z-scored target space, for the gradient check."""
    x = np.asarray(x, dtype=np.float64)
    z_t = (np.asarray(y, dtype=np.float64) - model.target_mean) / model.target_std
    _, g = _loss_and_grad(model, x, z_t)
    return g


@dataclass
class TrainResult:
    model: RegressorModel
    train_curve: np.ndarray
    val_curve: np.ndarray
    best_epoch: int
    epochs_run: int


def _check_xy(x, y, what):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    require(x.ndim == 2 and y.ndim == 1 and x.shape[0] == y.size,
            f"{what}: X must be (n, d) with matching y length")
    require(bool(np.all(np.isfinite(x))) and bool(np.all(np.isfinite(y))),
            f"{what}: rows must be finite; drop masked rows first")
    return x, y


def train(model: RegressorModel, x_train, y_train, x_val, y_val,
          config: TrainConfig | None = None) -> TrainResult:
    """Full-batch adaptive-step descent with best-validation early stopping.

    The returned model is the snapshot at the smallest validation loss seen;
    later epochs never replace it. Training stops once validation fails to
    improve for ``patience`` consecutive epochs (at least one), or at
    ``max_epochs``.
    """
    cfg = config or TrainConfig()
    x_train, y_train = _check_xy(x_train, y_train, "train")
    x_val, y_val = _check_xy(x_val, y_val, "val")
    require(x_train.shape[1] == model.input_dim, "train width != model input_dim")
    require(x_val.shape[1] == model.input_dim, "val width != model input_dim")
    require(y_train.size >= 2, "need at least 2 training rows")

    t_mean = float(np.mean(y_train))
    t_std = float(np.std(y_train))
    require(t_std > 0, "constant training target")
    model = replace(model.copy(), target_mean=t_mean, target_std=t_std)
    z_train = (y_train - t_mean) / t_std
    z_val = (y_val - t_mean) / t_std

    lr = cfg.learn_rate
    vel = [np.zeros_like(model.w_hidden), np.zeros_like(model.b_hidden),
           np.zeros_like(model.w_out), 0.0]
    loss, _ = _loss_and_grad(model, x_train, z_train, want_grad=False)
    if not math.isfinite(loss):
        raise NumericalError("initial training loss is not finite")

    best = model.copy()
    best_val, _ = _loss_and_grad(model, x_val, z_val, want_grad=False)
    best_epoch = 0
    since_best = 0
    stop_after = max(cfg.patience, 1)
    train_curve, val_curve = [loss], [best_val]

    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        _, g = _loss_and_grad(model, x_train, z_train)
        step = []
        for i, grad in enumerate(g):
            vel[i] = cfg.momentum * vel[i] - lr * grad
            step.append(vel[i])
        cand = model.copy()
        cand.w_hidden = model.w_hidden + step[0]
        cand.b_hidden = model.b_hidden + step[1]
        cand.w_out = model.w_out + step[2]
        cand.b_out = model.b_out + step[3]
        new_loss, _ = _loss_and_grad(cand, x_train, z_train, want_grad=False)
        if math.isnan(new_loss):
            raise NumericalError(
                f"training loss became NaN at epoch {epoch} (learn rate {lr:g})")
        if new_loss <= loss:
            model, loss = cand, new_loss
            lr *= cfg.grow
        else:
            lr *= cfg.shrink
            vel = [np.zeros_like(v) if isinstance(v, np.ndarray) else 0.0
                   for v in vel]
        val_loss, _ = _loss_and_grad(model, x_val, z_val, want_grad=False)
        train_curve.append(loss)
        val_curve.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = model.copy()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= stop_after:
                break

    best.metadata.update({"epochs_run": epoch, "best_epoch": best_epoch,
                          "best_val_loss": best_val,
                          "final_train_loss": loss})
    return TrainResult(best, np.array(train_curve), np.array(val_curve),
                       best_epoch, epoch)


def fine_tune(model: RegressorModel, x_adapt, y_adapt,
              config: FineTuneConfig | None = None,
              input_columns=None) -> RegressorModel:
    """Continue descent from the trained weights at a reduced step.

    The architecture, feature schema, and target scaling stay fixed; only the
    weights move, for ``epochs`` epochs of the same adaptive-step loop with
    no early stopping. A feature schema differing from the model's is an
    error, not a silent re-projection.
    """
    cfg = config or FineTuneConfig()
    x_adapt, y_adapt = _check_xy(x_adapt, y_adapt, "adapt")
    if input_columns is not None and model.input_columns is not None:
        if tuple(input_columns) != model.input_columns:
            raise ValidationError("adaptation feature schema differs from the model's")
    require(x_adapt.shape[1] == model.input_dim, "adapt width != model input_dim")
    if cfg.epochs == 0:
        return model.copy()
    require(y_adapt.size >= 10, "adaptation set must hold at least 10 rows")

    z = (y_adapt - model.target_mean) / model.target_std
    model = model.copy()
    lr = cfg.base.learn_rate * cfg.rate_scale
    loss, _ = _loss_and_grad(model, x_adapt, z, want_grad=False)
    if not math.isfinite(loss):
        raise NumericalError("initial adaptation loss is not finite")
    for epoch in range(1, cfg.epochs + 1):
        _, g = _loss_and_grad(model, x_adapt, z)
        cand = model.copy()
        cand.w_hidden = model.w_hidden - lr * g[0]
        cand.b_hidden = model.b_hidden - lr * g[1]
        cand.w_out = model.w_out - lr * g[2]
        cand.b_out = model.b_out - lr * g[3]
        new_loss, _ = _loss_and_grad(cand, x_adapt, z, want_grad=False)
        if math.isnan(new_loss):
            raise NumericalError(f"adaptation loss became NaN at epoch {epoch}")
        if new_loss <= loss:
            model, loss = cand, new_loss
            lr *= cfg.base.grow
        else:
            lr *= cfg.base.shrink
    model.metadata["fine_tune_epochs"] = cfg.epochs
    model.metadata["fine_tune_loss"] = loss
    return model


@dataclass(frozen=True)
class EvalReport:
    rmse_cm: float
    mae_cm: float
    n_samples: int
    segments: dict = field(default_factory=dict)

    def __post_init__(self):
        require(self.n_samples > 0, "empty evaluation")
        require(self.rmse_cm >= self.mae_cm >= 0,
                "rmse must dominate mae")


def evaluate(y_hat, y_true, segment_ids=None) -> EvalReport:
    """RMSE and MAE in centimeters; inputs are water levels in meters."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    require(y_hat.size == y_true.size, "length mismatch")
    require(y_hat.size >= 1, "empty evaluation")
    err = y_hat - y_true

    def _pair(e):
        return (float(np.sqrt(np.mean(e * e))) * 100.0,
                float(np.mean(np.abs(e))) * 100.0)

    rmse, mae = _pair(err)
    segments = {}
    if segment_ids is not None:
        segment_ids = np.asarray(segment_ids)
        require(segment_ids.size == y_hat.size, "segment_ids length mismatch")
        for seg in np.unique(segment_ids):
            e = err[segment_ids == seg]
            r, m = _pair(e)
            segments[str(seg)] = {"rmse_cm": r, "mae_cm": m, "n": int(e.size)}
    return EvalReport(rmse, mae, int(y_hat.size), segments)


def _schema_hash(input_columns, input_dim, hidden) -> str:
    desc = json.dumps({"input_columns": list(input_columns or []),
                       "input_dim": input_dim, "hidden": hidden},
                      sort_keys=True)
    return hashlib.sha256(desc.encode("utf-8")).hexdigest()


def save_model(model: RegressorModel, path) -> None:
    """JSON with shortest round-trip floats, so loading is bit-exact."""
    doc = {
        "schema_hash": _schema_hash(model.input_columns, model.input_dim,
                                    model.hidden),
        "input_columns": list(model.input_columns) if model.input_columns else None,
        "weights": {"hidden": [[float(v) for v in row] for row in model.w_hidden],
                    "output": [float(v) for v in model.w_out]},
        "biases": {"hidden": [float(v) for v in model.b_hidden],
                   "output": float(model.b_out)},
        "target_stats": {"mean": model.target_mean, "std": model.target_std},
        "feature_stats": (model.feature_stats.to_dict()
                          if model.feature_stats else None),
        "metadata": model.metadata,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path) -> RegressorModel:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    w_hidden = np.array(doc["weights"]["hidden"], dtype=np.float64)
    if w_hidden.ndim != 2:
        raise ValidationError(f"{path}: hidden weights are not a matrix")
    cols = doc.get("input_columns")
    model = RegressorModel(
        w_hidden,
        np.array(doc["biases"]["hidden"], dtype=np.float64),
        np.array(doc["weights"]["output"], dtype=np.float64),
        float(doc["biases"]["output"]),
        float(doc["target_stats"]["mean"]),
        float(doc["target_stats"]["std"]),
        tuple(cols) if cols else None,
        (StandardizationStats.from_dict(doc["feature_stats"])
         if doc.get("feature_stats") else None),
        dict(doc.get("metadata", {})),
    )
    expect = _schema_hash(model.input_columns, model.input_dim, model.hidden)
    if doc.get("schema_hash") != expect:
        raise ValidationError(f"{path}: schema hash mismatch; refusing to load")
    return model


def write_predictions(path, times, y_hat, y_true=None, row_valid=None) -> None:
    """Prediction CSV; masked rows keep their timestamp with an empty y_hat."""
    times = np.asarray(times, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if row_valid is None:
        row_valid = np.ones(times.size, dtype=bool)
    with_truth = y_true is not None
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("t_unix_s,y_true_m,y_hat_m\n" if with_truth
                else "t_unix_s,y_hat_m\n")
        for i, t in enumerate(times):
            pred = repr(float(y_hat[i])) if row_valid[i] else ""
            if with_truth:
                f.write(f"{float(t)!r},{float(y_true[i])!r},{pred}\n")
            else:
                f.write(f"{float(t)!r},{pred}\n")


def read_predictions(path):
    """Returns (times, y_true or None, y_hat with NaN for masked rows)."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header == "t_unix_s,y_true_m,y_hat_m":
            with_truth = True
        elif header == "t_unix_s,y_hat_m":
            with_truth = False
        else:
            raise ValidationError(f"{path}: unexpected prediction header")
        times, y_true, y_hat = [], [], []
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            times.append(float(parts[0]))
            if with_truth:
                y_true.append(float(parts[1]))
                y_hat.append(float(parts[2]) if parts[2] else np.nan)
            else:
                y_hat.append(float(parts[1]) if parts[1] else np.nan)
    return (np.array(times), np.array(y_true) if with_truth else None,
            np.array(y_hat))
