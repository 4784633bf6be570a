"""Acceptance suite: every exit criterion, with its stated tolerance.

Each test prints one PASS line on success (run with -s or -v to see them);
a failure shows up as a normal pytest failure naming the criterion.
"""

import time

import numpy as np
import pytest
from conftest import small_model_config
from scipy.special import erf
from sklearn.linear_model import Ridge
from synth import make_split_pair

import drex
from drex.autodiff import huber_loss
from drex.checkpoint import save_checkpoint
from drex.features import DatasetManifest, FeatureRecord
from drex.model import FusionConfig, forward_graph, init_params, param_count, predict_batch
from drex.optim import EmaState, OneCycleSchedule, ema_update, onecycle_lr
from drex.training import TrainConfig, render_report, train


def _report(name):
    print(f"ACCEPTANCE {name}: PASS")


# --------------------------------------------------------------------------
# Gradient correctness
# --------------------------------------------------------------------------


def _loss_value(params, d, r, t):
    fp = forward_graph(params, d, r)
    return float(huber_loss(fp.pred, t, 1.0).data)


def test_gradient_correctness_full_model():
    """Analytic vs central finite differences (h=1e-5, float64), 10 configs."""
    tic = time.perf_counter()
    h = 1e-5
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(10):
        config = FusionConfig(
            dino_dim=int(rng.integers(3, 8)),
            resnet_dim=int(rng.integers(4, 12)),
            proj_dim=int(rng.integers(3, 7)),
            attn_hidden=int(rng.integers(2, 6)),
            head_dims=tuple(
                int(rng.integers(2, 7)) for _ in range(int(rng.integers(1, 4)))
            ),
            dropout_p=0.0,
            tau_init=float(rng.uniform(0.6, 1.6)),
            alpha_init=float(rng.uniform(0.05, 0.4)),
            seed=int(trial),
        )
        params = init_params(config, dtype=np.float64)
        batch = 3
        d = rng.normal(size=(batch, config.dino_dim))
        r = rng.normal(size=(batch, config.resnet_dim))
        t = rng.uniform(0.0, 1.0, size=batch)

        fp = forward_graph(params, d, r, input_grads=True)
        loss = huber_loss(fp.pred, t, 1.0)
        params.store.zero_grad()
        loss.backward()

        checks = [(name, tensor.data, tensor.grad) for name, tensor in params.store.items()]
        checks.append(("input.dino", d, fp.dino_input.grad))
        checks.append(("input.resnet", r, fp.resnet_input.grad))
        for name, arr, grad in checks:
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = _loss_value(params, d, r, t)
                flat[k] = orig - h
                down = _loss_value(params, d, r, t)
                flat[k] = orig
                numeric = (up - down) / (2.0 * h)
                analytic = gflat[k]
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
                worst = max(worst, rel)
    elapsed = time.perf_counter() - tic
    assert worst < 1e-4, f"max relative gradient error {worst:.3e}"
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
    _report(f"gradient-correctness (max rel err {worst:.2e}, {elapsed:.1f}s)")


# --------------------------------------------------------------------------
# Parameter count
# --------------------------------------------------------------------------


def test_parameter_count_default_config():
    params = init_params(FusionConfig())
    count = param_count(params)
    assert count == 1_783_429
    assert 1_700_000 <= count <= 1_900_000
    _report(f"parameter-count ({count})")


# --------------------------------------------------------------------------
# Metric oracle equivalence
# --------------------------------------------------------------------------


def _brute_pearson(c, p):
    n = len(c)
    mc = sum(c) / n
    mp = sum(p) / n
    num = sum((c[i] - mc) * (p[i] - mp) for i in range(n))
    den = (
        sum((c[i] - mc) ** 2 for i in range(n)) * sum((p[i] - mp) ** 2 for i in range(n))
    ) ** 0.5
    return num / den


def _brute_ranks(x):
    n = len(x)
    ranks = [0.0] * n
    for i in range(n):
        less = sum(1 for v in x if v < x[i])
        equal = sum(1 for v in x if v == x[i])
        ranks[i] = less + (equal + 1) / 2.0
    return ranks


def _brute_spearman(c, p):
    return _brute_pearson(_brute_ranks(c), _brute_ranks(p))


def _brute_errors(c, p):
    n = len(c)
    rmse = (sum((c[i] - p[i]) ** 2 for i in range(n)) / n) ** 0.5
    mae = sum(abs(c[i] - p[i]) for i in range(n)) / n
    return rmse, mae


def test_metric_oracle_equivalence():
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(100):
        c = rng.normal(size=50)
        p = 0.5 * c + 0.5 * rng.normal(size=50)
        if rng.uniform() < 0.5:  # force ties
            c = np.round(c, 1)
            p = np.round(p, 1)
        cl, pl = c.tolist(), p.tolist()
        worst = max(
            worst,
            abs(drex.pearson(c, p) - _brute_pearson(cl, pl)),
            abs(drex.spearman(c, p) - _brute_spearman(cl, pl)),
        )
        rmse, mae = drex.error_metrics(c, p)
        b_rmse, b_mae = _brute_errors(cl, pl)
        worst = max(worst, abs(rmse - b_rmse), abs(mae - b_mae))
    assert worst < 1e-10, f"worst metric disagreement {worst:.3e}"
    _report(f"metric-oracle-equivalence (worst {worst:.1e})")


# --------------------------------------------------------------------------
# Synthetic learnability
# --------------------------------------------------------------------------


def test_synthetic_learnability_full_scale():
    tic = time.perf_counter()
    train_set, test_set = make_split_pair(2000, 500, seed=11, informative="both")
    # independent oracle: ridge regression on the same features
    X_train = np.concatenate([train_set.dino_matrix(), train_set.resnet_matrix()], axis=1)
    X_test = np.concatenate([test_set.dino_matrix(), test_set.resnet_matrix()], axis=1)
    ridge = Ridge(alpha=10.0).fit(X_train.astype(np.float64), train_set.scores())
    ridge_r = drex.pearson(test_set.scores(), ridge.predict(X_test.astype(np.float64)))
    assert ridge_r >= 0.95, f"ridge oracle only reaches r={ridge_r:.4f}"

    checkpoint, report = train(
        FusionConfig(seed=5), TrainConfig(seed=5), train_set, test_set
    )
    model_r = report.val_metrics.pearson_r
    elapsed = time.perf_counter() - tic
    assert model_r >= 0.95, f"trained model only reaches r={model_r:.4f}"
    assert elapsed < 120.0, f"learnability run took {elapsed:.1f}s"
    _report(f"synthetic-learnability (model r={model_r:.4f}, ridge r={ridge_r:.4f}, {elapsed:.0f}s)")


# --------------------------------------------------------------------------
# Ablation algebra
# --------------------------------------------------------------------------

_INV_SQRT2 = 0.7071067811865476


def _mirror_forward(params, dino, resnet, zero_branch):
    """Straight-line reimplementation of the zeroed-branch forward pass."""
    store = params.store
    cfg = params.config

    def linear(x, name):
        return x @ store[f"{name}.weight"].data + store[f"{name}.bias"].data

    def layernorm(x, name):
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + 1e-5)
        return (centered * inv) * store[f"{name}.gain"].data + store[f"{name}.offset"].data

    def act(x):
        return x * (0.5 * (1.0 + erf(x * _INV_SQRT2)))

    d_prime = act(layernorm(linear(dino, "dino_proj"), "dino_norm"))
    r_prime = act(layernorm(linear(resnet, "resnet_proj"), "resnet_norm"))
    if zero_branch == "dino":
        d_prime = np.zeros_like(d_prime)
    elif zero_branch == "resnet":
        r_prime = np.zeros_like(r_prime)

    joint = np.concatenate([d_prime, r_prime], axis=-1)
    hidden = act(linear(joint, "attn.fc1"))
    logits = linear(hidden, "attn.fc2")
    tau = np.exp(store["log_tau"].data)
    scaled = logits * (1.0 / tau)
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    w = e / e.sum(axis=-1, keepdims=True)
    w_d = w[..., 0:1]
    w_r = w[..., 1:2]

    fused_pre = (w_d * d_prime + w_r * r_prime) + store["alpha"].data * (d_prime + r_prime)
    x = layernorm(fused_pre, "fused_norm")
    for i in range(len(cfg.head_dims)):
        x = act(linear(x, f"head.fc{i + 1}"))
    out = linear(x, "head.out")
    return out.reshape(dino.shape[0]), w[:, 0].copy()


def test_ablation_matches_verbatim_equations_bit_exactly():
    rng = np.random.default_rng(31)
    checked = 0
    for trial in range(10):
        config = small_model_config(seed=trial, dropout_p=0.0)
        params = init_params(config)  # float32, same as a trained checkpoint
        for _ in range(5):
            batch = int(rng.integers(1, 5))
            d = rng.normal(size=(batch, config.dino_dim)).astype(np.float32)
            r = rng.normal(size=(batch, config.resnet_dim)).astype(np.float32)
            for branch in ("dino", "resnet"):
                preds, w_d = predict_batch(params, d, r, zero_branch=branch)
                mirror_preds, mirror_w = _mirror_forward(params, d, r, branch)
                assert preds.tobytes() == mirror_preds.tobytes()
                assert w_d.tobytes() == mirror_w.tobytes()
                checked += batch
    assert checked >= 100
    _report(f"ablation-algebra (bit-exact on {checked} inputs)")


def test_zero_dimension_delta_is_exactly_zero(small_checkpoint):
    from drex.analysis import ablate_dino_dim

    ckpt, _, _, test_set = small_checkpoint
    zeroed_records = []
    for rec in test_set.records:
        dino = rec.dino.copy()
        dino[9] = 0.0
        zeroed_records.append(FeatureRecord(rec.id, dino, rec.resnet, rec.score))
    manifest = DatasetManifest(
        records=zeroed_records, dino_dim=test_set.dino_dim, block_dims=test_set.block_dims
    )
    result = ablate_dino_dim(ckpt, manifest, 9, n_perm=50, seed=0)
    assert result.delta_r == 0.0
    assert result.delta_rho == 0.0
    _report("ablation-zero-dimension (delta exactly 0)")


# --------------------------------------------------------------------------
# Statistical machinery
# --------------------------------------------------------------------------


def test_statistical_machinery():
    # BH-FDR on the worked example
    mask = drex.bh_fdr(np.array([0.001, 0.02, 0.04, 0.9]), alpha=0.05)
    assert mask.tolist() == [True, True, False, False]

    # permutation test: identical prediction sets give p = 1.0
    rng = np.random.default_rng(303)
    t = rng.uniform(size=60)
    a = t + rng.normal(scale=0.2, size=60)
    assert drex.permutation_test_delta(a, a.copy(), t, 999, seed=0) == 1.0

    # null calibration over 200 seeded trials
    n, n_perm = 80, 499
    hits = 0
    trials = 200
    for trial in range(trials):
        trial_rng = np.random.default_rng([4404, trial])
        targets = trial_rng.uniform(size=n)
        pa = targets + trial_rng.normal(scale=0.3, size=n)
        pb = targets + trial_rng.normal(scale=0.3, size=n)
        p = drex.permutation_test_delta(pa, pb, targets, n_perm, seed=[4405, trial])
        hits += p < 0.05
    fraction = hits / trials
    assert 0.02 <= fraction <= 0.08, f"null p<0.05 fraction {fraction}"
    _report(f"statistical-machinery (null fraction {fraction:.3f})")


# --------------------------------------------------------------------------
# Schedule / EMA traces
# --------------------------------------------------------------------------


def test_schedule_and_ema_traces():
    train_set, test_set = make_split_pair(
        130, 40, seed=21, dino_dim=24, block_dims=(8, 8, 12, 12)
    )
    train_config = TrainConfig(epochs=3, seed=2)
    _, report = train(small_model_config(seed=2), train_config, train_set, test_set)
    sched = OneCycleSchedule(
        max_lr=train_config.max_lr,
        total_steps=report.total_steps,
        pct_start=train_config.pct_start,
        div_factor=train_config.div_factor,
        final_div_factor=train_config.final_div_factor,
    )
    assert len(report.lr_trace) == report.total_steps
    for step, logged in enumerate(report.lr_trace):
        assert logged == onecycle_lr(sched, step)

    # EMA from zero init under a constant parameter follows the geometric series
    from drex.autodiff import ParamStore, Tensor

    p = 0.918273645
    store = ParamStore({"w": Tensor(np.array(p, dtype=np.float64))})
    ema = EmaState.zeros_like(store, decay=0.999)
    for k in range(1, 1001):
        ema_update(ema, store)
        expected = p * (1.0 - 0.999**k)
        assert abs(float(ema.shadow["w"]) - expected) < 1e-12
    _report("schedule-ema-traces")


# --------------------------------------------------------------------------
# Determinism
# --------------------------------------------------------------------------


def test_determinism_bitwise(tmp_path):
    train_set, test_set = make_split_pair(
        130, 40, seed=31, dino_dim=24, block_dims=(8, 8, 12, 12)
    )
    blobs = []
    for run in range(2):
        checkpoint, report = train(
            small_model_config(seed=13), TrainConfig(epochs=2, seed=13), train_set, test_set
        )
        path = tmp_path / f"run{run}.drxc"
        save_checkpoint(checkpoint, path)
        blobs.append((path.read_bytes(), render_report(report)))
    assert blobs[0][0] == blobs[1][0], "checkpoints differ between identical runs"
    assert blobs[0][1] == blobs[1][1], "reports differ between identical runs"
    _report("determinism (checkpoints and reports bitwise identical)")


# --------------------------------------------------------------------------
# Paper-scale reproduction (documented recipe, not a desk-scale gate)
# --------------------------------------------------------------------------


@pytest.mark.skip(
    reason="paper-scale reproduction needs the external IC9600 dataset and "
    "pretrained backbones; the recipe is documented in README.md "
    "(expected test-split r about 0.9581 +/- 0.01, with the conv-branch "
    "ablation dropping far more than the transformer-branch ablation)"
)
def test_paper_scale_reproduction():
    pass
