"""Dataset construction, training, inference and corpus evaluation."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import CapacityError, HeaderError, ParseError, TrainingAborted, TruncatedError
from .imageio import load_image
from .loss import LossConfig, total_loss
from .metrics import IDENTICAL, MetricsReport, enl, psnr, ratio_image, ratio_kl, snr, ssim
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint
from .nn import OptimState, sgd_momentum_step
from .speckle import SpeckleConfig, as_gray, gamma_speckle_field, patch_positions

CONFIG_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1
PATCH_MAGIC = b"KLPATCH1\n"
NORMALIZATION_RULE = ("integer images divided by their maxval (PGM maxval, 255 for 8-bit, "
                      "65535 for 16-bit); colour converted with BT.601 luma; native float "
                      "images used as stored")


# configuration


@dataclass(frozen=True)
class DatasetConfig:
    patch_size: int = 65
    stride: int = 32
    train_patches: int = 30000
    validation_patches: int = 12000
    looks: int = 1
    seed: int = 0
    # optional {file name: patch count} mix; counts cover both splits and must sum to their total
    source_counts: Mapping[str, int] | None = None

    def __post_init__(self):
        if self.patch_size < 1 or self.stride < 1:
            raise ValueError("patch_size and stride must be >= 1")
        if self.train_patches < 1 or self.validation_patches < 0:
            raise ValueError("need >= 1 training patch and >= 0 validation patches")
        if self.source_counts is not None:
            if any(int(c) != c or c < 0 for c in self.source_counts.values()):
                raise ValueError("source_counts must be non-negative integers")
            if sum(self.source_counts.values()) != self.train_patches + self.validation_patches:
                raise ValueError("source_counts must sum to train_patches + validation_patches")
        SpeckleConfig(self.looks, self.seed)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 2e-6
    momentum: float = 0.9
    looks: int = 1
    checkpoint_every: int = 0  # 0: only best and final
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.looks < 1 or self.checkpoint_every < 0:
            raise ValueError("looks must be >= 1 and checkpoint_every >= 0")


def _loss_to_dict(cfg: LossConfig) -> dict:
    d = asdict(cfg)
    d["lambda"] = d.pop("lam")
    return d


def _loss_from_dict(d: Mapping) -> LossConfig:
    d = dict(d)
    if "lambda" in d:
        d["lam"] = d.pop("lambda")
    return LossConfig(**_checked(LossConfig, d))


def _checked(cls, d: Mapping) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return dict(d)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        """Effective configuration with every default spelled out."""
        train = asdict(self.train)
        train["loss"] = _loss_to_dict(self.train.loss)
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "dataset": asdict(self.dataset),
            "model": asdict(self.model),
            "train": train,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        version = d.get("schema_version")
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"config schema_version {version!r} not supported "
                             f"(expected {CONFIG_SCHEMA_VERSION})")
        unknown = set(d) - {"schema_version", "dataset", "model", "train", "description"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        train = dict(d.get("train", {}))
        loss = _loss_from_dict(train.pop("loss", {}))
        return cls(
            dataset=DatasetConfig(**_checked(DatasetConfig, d.get("dataset", {}))),
            model=ModelConfig.from_dict(d.get("model", {})),
            train=TrainConfig(loss=loss, **_checked(TrainConfig, train)),
        )

    def with_overrides(self, seed: int | None = None, looks: int | None = None,
                       lam: float | None = None) -> "ExperimentConfig":
        ds, tr, loss = asdict(self.dataset), asdict(self.train), self.train.loss
        tr.pop("loss")
        if seed is not None:
            ds["seed"] = tr["seed"] = seed
        if looks is not None:
            ds["looks"] = tr["looks"] = looks
        if lam is not None:
            loss = LossConfig(**{**asdict(loss), "lam": lam})
        return ExperimentConfig(DatasetConfig(**ds), self.model, TrainConfig(loss=loss, **tr))


def bundled_scene_path() -> Path:
    """Path of the bundled 512x512 8-bit test scene."""
    return Path(str(resources.files("specklelab").joinpath("data", "scene512.pgm")))


def load_config(name_or_path) -> ExperimentConfig:
    """Read a JSON config file, or a bundled profile by name (``desk``, ``full``)."""
    p = Path(name_or_path)
    if p.suffix != ".json" and not p.exists():
        text = resources.files("specklelab").joinpath("configs", f"{name_or_path}.json").read_text("utf-8")
    else:
        text = p.read_text("utf-8")
    return ExperimentConfig.from_dict(json.loads(text))


# patch stores


@dataclass
class PatchStore:
    """Paired (noisy, clean) patches of one split plus their source anchors."""

    noisy: np.ndarray  # (count, h, w)
    clean: np.ndarray
    anchors: list[tuple[int, int, int]]  # (source index, row, col)

    def __len__(self):
        return self.noisy.shape[0]


def save_patch_store(store: PatchStore, path) -> Path:
    n, h, w = store.noisy.shape
    head = [f"{n} {h} {w}"] + [f"{s} {r} {c}" for s, r, c in store.anchors]
    data = (PATCH_MAGIC + ("\n".join(head) + "\n\n").encode("ascii")
            + store.noisy.astype("<f8").tobytes() + store.clean.astype("<f8").tobytes())
    path = Path(path)
    path.write_bytes(data)
    return path


def load_patch_store(path) -> PatchStore:
    buf = Path(path).read_bytes()
    if not buf.startswith(PATCH_MAGIC):
        raise HeaderError(f"{path}: not a KLPATCH1 patch store")
    end = buf.find(b"\n\n", len(PATCH_MAGIC) - 1)
    if end < 0:
        raise TruncatedError(f"{path}: patch index not terminated")
    try:
        lines = buf[len(PATCH_MAGIC) : end].decode("ascii").splitlines()
        n, h, w = (int(t) for t in lines[0].split())
        anchors = [tuple(int(t) for t in line.split()) for line in lines[1:]]
    except (UnicodeDecodeError, ValueError, IndexError):
        raise HeaderError(f"{path}: malformed patch index") from None
    if len(anchors) != n or any(len(a) != 3 for a in anchors):
        raise HeaderError(f"{path}: index lists {len(anchors)} anchors for {n} patches")
    block = 8 * n * h * w
    payload = buf[end + 2 :]
    if len(payload) != 2 * block:
        raise TruncatedError(f"{path}: payload has {len(payload)} bytes, expected {2 * block}")
    noisy = np.frombuffer(payload, "<f8", n * h * w, 0).reshape(n, h, w).astype(np.float64)
    clean = np.frombuffer(payload, "<f8", n * h * w, block).reshape(n, h, w).astype(np.float64)
    return PatchStore(noisy, clean, anchors)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# dataset


@dataclass
class DatasetManifest:
    sources: list[dict]
    skipped: list[dict]
    patch_spec: dict
    speckle: dict
    splits: dict
    stores: dict
    normalization: str
    seed: int
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetManifest":
        if d.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise ParseError(f"unsupported manifest schema_version {d.get('schema_version')!r}")
        return cls(**_checked(cls, d))


def build_dataset(clean_dir, cfg: DatasetConfig, out_dir) -> DatasetManifest:
    """Cut clean images into patches, speckle them, and write the two split stores.

    Every whole-patch anchor (no padding, given stride) of every decodable
    image forms one pool. The pool is shuffled with ``cfg.seed``; the first
    ``train_patches`` anchors form the training split and the next
    ``validation_patches`` the validation split. Each split gets its own
    speckle stream, so every patch pixel has an independent draw.
    """
    clean_dir, out_dir = Path(clean_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in clean_dir.iterdir() if p.is_file())
    images, sources, skipped = [], [], []
    for p in files:
        try:
            img = as_gray(load_image(p))
            pos = patch_positions(*img.shape, cfg.patch_size, cfg.stride)
        except (ParseError, ValueError, OSError) as exc:
            skipped.append({"path": str(p), "reason": str(exc)})
            continue
        images.append((img, pos))
        sources.append({"path": str(p), "sha256": _sha256(p), "patches": {}})
    if not images:
        raise ValueError(f"no decodable image with a {cfg.patch_size}px patch in {clean_dir}")

    need = cfg.train_patches + cfg.validation_patches
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    if cfg.source_counts is None:
        pool = [(s, r, c) for s, (_, pos) in enumerate(images) for r, c in pos]
        if len(pool) < need:
            raise CapacityError(f"{len(pool)} patch positions available at stride {cfg.stride}, "
                                f"{need} requested")
        chosen = [pool[i] for i in rng.permutation(len(pool))[:need]]
    else:
        chosen = _mixed_anchors(images, sources, cfg.source_counts, rng)
    splits = {"train": chosen[: cfg.train_patches], "validation": chosen[cfg.train_patches :]}

    k = cfg.patch_size
    stores, speckle = {}, {}
    for split_id, (split, anchors) in enumerate(splits.items(), start=1):
        clean = np.empty((len(anchors), k, k))
        for i, (s, r, c) in enumerate(anchors):
            clean[i] = images[s][0][r : r + k, c : c + k]
        seed = int(np.random.SeedSequence([cfg.seed, split_id]).generate_state(1, np.uint64)[0])
        if anchors:
            noise = gamma_speckle_field(SpeckleConfig(cfg.looks, seed), len(anchors) * k, k)
            noisy = clean * noise.reshape(len(anchors), k, k)
        else:
            noisy = clean.copy()
        store_path = save_patch_store(PatchStore(noisy, clean, anchors), out_dir / f"{split}.patches")
        stores[split] = {"file": store_path.name, "sha256": _sha256(store_path), "count": len(anchors)}
        speckle[split] = {"looks": cfg.looks, "seed": seed}
        for s, *_ in anchors:
            counts = sources[s]["patches"]
            counts[split] = counts.get(split, 0) + 1

    manifest = DatasetManifest(
        sources=sources,
        skipped=skipped,
        patch_spec={"patch_size": cfg.patch_size, "stride": cfg.stride},
        speckle=speckle,
        splits={name: len(a) for name, a in splits.items()},
        stores=stores,
        normalization=NORMALIZATION_RULE,
        seed=cfg.seed,
    )
    (out_dir / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", "utf-8")
    return manifest


def _mixed_anchors(images, sources, counts: Mapping[str, int], rng) -> list[tuple[int, int, int]]:
    index = {Path(src["path"]).name: s for s, src in enumerate(sources)}
    missing = sorted(set(counts) - set(index))
    if missing:
        raise ValueError(f"source_counts names files that are absent or unreadable: {missing}")
    chosen = []
    for name in sorted(counts):
        s, want = index[name], int(counts[name])
        pos = images[s][1]
        if want > len(pos):
            raise CapacityError(f"{name}: {len(pos)} patch positions, {want} requested")
        chosen += [(s, *pos[i]) for i in rng.permutation(len(pos))[:want]]
    return [chosen[i] for i in rng.permutation(len(chosen))]


def load_dataset(dataset_dir, verify_sources: bool = True) -> tuple[DatasetManifest, dict[str, PatchStore]]:
    """Load and verify a built dataset; hash or count mismatches raise ``ValueError``."""
    dataset_dir = Path(dataset_dir)
    manifest = DatasetManifest.from_dict(json.loads((dataset_dir / "manifest.json").read_text("utf-8")))
    if verify_sources:
        for src in manifest.sources:
            if not Path(src["path"]).exists() or _sha256(src["path"]) != src["sha256"]:
                raise ValueError(f"source {src['path']} is missing or modified since the build")
    stores = {}
    for split, info in manifest.stores.items():
        path = dataset_dir / info["file"]
        if _sha256(path) != info["sha256"]:
            raise ValueError(f"patch store {path} does not match its manifest hash")
        store = load_patch_store(path)
        if len(store) != info["count"] or len(store) != manifest.splits[split]:
            raise ValueError(f"{split}: manifest says {info['count']} patches, store has {len(store)}")
        stores[split] = store
    return manifest, stores


# training


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    train_kl: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    val_kl: list[float] = field(default_factory=list)
    val_psnr: list[float] = field(default_factory=list)
    val_ratio_kl: list[float] = field(default_factory=list)
    val_ratio_kl_pooled: list[float] = field(default_factory=list)
    noisy_psnr: float = math.nan
    best_epoch: int = 0
    config: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        """Deterministic part of the report (everything except wall-clock time)."""
        d = asdict(self)
        d.pop("wall_clock_seconds")
        return d


@dataclass
class TrainResult:
    model: Model
    best_model: Model
    report: TrainReport
    files: dict[str, Path] = field(default_factory=dict)


@dataclass
class _Evaluation:
    loss: float
    mse: float
    kl: float
    psnr: float
    ratio_kl: float
    ratio_kl_pooled: float


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _evaluate(model: Model, store: PatchStore, cfg: TrainConfig) -> _Evaluation:
    n = len(store)
    tot = mse_sum = kl_sum = sq_err = 0.0
    ratio_kls, ratios = [], []
    for sl in _batches(n, cfg.batch_size):
        x = store.noisy[sl][:, None]
        ref = store.clean[sl][:, None]
        pred = model.forward(x, mode="infer")
        res = total_loss(x, pred, ref, cfg.loss, cfg.looks)
        w = (sl.stop - sl.start) / n
        tot += w * res.total
        mse_sum += w * res.mse
        kl_sum += w * res.kl
        out = np.maximum(pred[:, 0], 0.0)
        sq_err += float(np.sum((out - store.clean[sl]) ** 2))
        for yi, xi in zip(store.noisy[sl], out):
            r = ratio_image(yi, xi, cfg.loss.division_floor)
            ratios.append(r)
            ratio_kls.append(ratio_kl(r, cfg.looks, cfg.loss))
    err = sq_err / store.clean.size
    return _Evaluation(tot, mse_sum, kl_sum, IDENTICAL if err == 0 else 10 * math.log10(1 / err),
                       float(np.mean(ratio_kls)), ratio_kl(np.stack(ratios), cfg.looks, cfg.loss))


def noisy_baseline_psnr(store: PatchStore) -> float:
    """Pooled PSNR (peak 1) of the noisy patches against their clean references."""
    err = float(np.mean((store.noisy - store.clean) ** 2))
    return IDENTICAL if err == 0 else 10 * math.log10(1 / err)


def train(dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir=None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Train a despeckler with SGD + momentum on the hybrid MSE + KL cost.

    ``dataset`` is a dataset directory or a ``{"train": PatchStore,
    "validation": PatchStore}`` mapping. Every run is a pure function of the
    data and the two configs. When ``out_dir`` is given, ``best.ckpt``,
    ``final.ckpt``, ``train_report.json`` and ``timing.json`` are written
    there; the best checkpoint has the lowest validation loss, ties broken by
    validation PSNR.
    """
    t0 = time.perf_counter()
    if isinstance(dataset, (str, Path)):
        _, stores = load_dataset(dataset)
    else:
        stores = dataset
    tr, va = stores["train"], stores.get("validation")
    if va is None or len(va) == 0:
        va = tr
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    model = Model.init(model_cfg, seed=train_cfg.seed)
    state = OptimState(train_cfg.learning_rate, train_cfg.momentum)
    params = model.parameters()
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 1]))
    loss_cfg, looks = train_cfg.loss, train_cfg.looks
    report = TrainReport(noisy_psnr=noisy_baseline_psnr(va),
                         config={"model": asdict(model_cfg),
                                 "train": {**asdict(train_cfg), "loss": _loss_to_dict(loss_cfg)}})
    best_key, best_model = None, None
    n = len(tr)

    def meta(epoch):
        return {"epoch": epoch, "seed": train_cfg.seed, "lambda": loss_cfg.lam,
                "learning_rate": train_cfg.learning_rate, "looks": looks}

    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for b, sl in enumerate(_batches(n, train_cfg.batch_size)):
            idx = np.sort(order[sl])  # shuffling picks batch members; in-batch order is fixed
            x = tr.noisy[idx][:, None]
            pred = model.forward(x, mode="train")
            res = total_loss(x, pred, tr.clean[idx][:, None], loss_cfg, looks)
            for component, value in (("MSE", res.mse), ("KL", res.kl)):
                if not math.isfinite(value):
                    raise TrainingAborted(f"non-finite {component} term at epoch {epoch}, batch {b}")
            if not np.all(np.isfinite(res.grad)):
                raise TrainingAborted(f"non-finite loss gradient at epoch {epoch}, batch {b}")
            grads, _ = model.backward(res.grad)
            sgd_momentum_step(params, grads, state)
            sums += (len(idx) / n) * np.array([res.total, res.mse, res.kl])

        ev = _evaluate(model, va, train_cfg)
        report.train_loss.append(float(sums[0]))
        report.train_mse.append(float(sums[1]))
        report.train_kl.append(float(sums[2]))
        report.val_loss.append(ev.loss)
        report.val_mse.append(ev.mse)
        report.val_kl.append(ev.kl)
        report.val_psnr.append(ev.psnr)
        report.val_ratio_kl.append(ev.ratio_kl)
        report.val_ratio_kl_pooled.append(ev.ratio_kl_pooled)
        if log:
            log(f"epoch {epoch}: train {sums[0]:.6g} (mse {sums[1]:.6g}, kl {sums[2]:.6g}) "
                f"val {ev.loss:.6g} psnr {ev.psnr:.3f} dB ratio-kl {ev.ratio_kl:.4g} "
                f"(pooled {ev.ratio_kl_pooled:.4g})")

        key = (ev.loss, -ev.psnr)
        if best_key is None or key < best_key:
            best_key, best_model = key, copy.deepcopy(model)
            report.best_epoch = epoch
            if out_dir is not None:
                save_checkpoint(model, out_dir / "best.ckpt", meta(epoch))
        if out_dir is not None and train_cfg.checkpoint_every and epoch % train_cfg.checkpoint_every == 0:
            save_checkpoint(model, out_dir / f"epoch{epoch:04d}.ckpt", meta(epoch))

    model.mode = best_model.mode = "infer"
    model._tape = best_model._tape = None
    report.wall_clock_seconds = time.perf_counter() - t0
    files = {}
    if out_dir is not None:
        files["final"] = save_checkpoint(model, out_dir / "final.ckpt", meta(train_cfg.epochs))
        files["best"] = out_dir / "best.ckpt"
        files["report"] = out_dir / "train_report.json"
        files["report"].write_text(json.dumps(report.to_dict(), indent=2) + "\n", "utf-8")
        (out_dir / "timing.json").write_text(
            json.dumps({"wall_clock_seconds": report.wall_clock_seconds}) + "\n", "utf-8")
    return TrainResult(model, best_model, report, files)


# inference and evaluation


def _as_model(denoiser, expected=None) -> Model:
    if isinstance(denoiser, Model):
        return denoiser
    model, _ = load_checkpoint(denoiser, expected)
    return model


def despeckle_image(checkpoint, noisy, with_ratio: bool = False, floor: float = 1e-3,
                    expected: ModelConfig | Mapping | None = None):
    """Filter one image in infer mode; returns the estimate, or ``(estimate, ratio)``."""
    model = _as_model(checkpoint, expected)
    noisy = as_gray(noisy, "noisy")
    out = model.predict(noisy)
    if with_ratio:
        return out, ratio_image(noisy, out, floor)
    return out


def _corpus(src) -> dict[str, np.ndarray]:
    if isinstance(src, Mapping):
        return {str(k): as_gray(v) for k, v in src.items()}
    return {p.name: load_image(p) for p in sorted(Path(src).iterdir()) if p.is_file()}


def evaluate_corpus(denoiser, noisy, clean=None, mode: str = "paired", looks: int = 1,
                    loss_cfg: LossConfig | None = None, peak: float = 1.0, out_dir=None,
                    provenance: Mapping | None = None) -> MetricsReport:
    """Run ``denoiser`` over a corpus and score it.

    ``denoiser`` is a :class:`Model`, a checkpoint path, or any callable
    mapping a noisy image (and its id) to a filtered one. ``paired`` mode needs
    clean references with the same ids and reports PSNR/SSIM/SNR; ``unpaired``
    mode takes no references and reports ENL of the filtered image and the
    ratio-image KL. Writes ``metrics.csv``/``metrics.json`` to ``out_dir`` if
    given.
    """
    if mode not in ("paired", "unpaired"):
        raise ValueError(f"mode must be 'paired' or 'unpaired', got {mode!r}")
    if (mode == "paired") != (clean is not None):
        raise ValueError("paired mode needs clean references; unpaired mode must not get any")
    loss_cfg = loss_cfg or LossConfig()
    noisy_imgs = _corpus(noisy)
    if not noisy_imgs:
        raise ValueError("empty corpus")
    clean_imgs = _corpus(clean) if clean is not None else {}
    if mode == "paired" and set(clean_imgs) != set(noisy_imgs):
        missing = sorted(set(noisy_imgs) ^ set(clean_imgs))
        raise ValueError(f"noisy and clean corpora do not pair up: {missing[:5]}")

    if callable(denoiser) and not isinstance(denoiser, (Model, str, Path)):
        fn = denoiser
        prov = {"denoiser": getattr(denoiser, "__name__", repr(denoiser))}
    else:
        model = _as_model(denoiser)
        fn = lambda img, _id: model.predict(img)  # noqa: E731
        prov = {"denoiser": str(denoiser) if not isinstance(denoiser, Model) else "in-memory model"}
    prov.update({"mode": mode, "looks": looks, "peak": peak, "images": sorted(noisy_imgs)})
    prov.update(provenance or {})

    report = MetricsReport(provenance=prov)
    for image_id in sorted(noisy_imgs):
        y = noisy_imgs[image_id]
        x_hat = np.maximum(as_gray(fn(y, image_id), "filtered"), 0.0)
        if mode == "paired":
            x = clean_imgs[image_id]
            report.add(image_id, {"psnr": psnr(x, x_hat, peak), "ssim": ssim(x, x_hat, data_range=peak),
                                  "snr": snr(x, x_hat)})
        else:
            try:
                e = enl(x_hat)
            except ValueError:
                e = math.inf  # constant output: no residual variance
            report.add(image_id, {"enl": e, "ratio_kl": ratio_kl(
                ratio_image(y, x_hat, loss_cfg.division_floor), looks, loss_cfg)})
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.to_csv(out_dir / "metrics.csv")
        report.to_json(out_dir / "metrics.json")
    return report
