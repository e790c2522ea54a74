"""Train / decode / score orchestration across the three passes, with an INI
config, versioned model bundles, and reproducible seeding.

Everything downstream of the config is deterministic: the manifest records
the config hash, the seed, and checksums of the training data, and two runs
with identical inputs produce byte-identical bundles and hypothesis files.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import evaluation, grammar, hmm, sda, signal_io
from .bundle import Bundle
from .features import PIPELINE_RATE_HZ, FeatureGrid, FrameSpec, extract_features
from .labels import LABEL_NAMES, NUM_CLASSES, EventLabel
from .signal_io import ALL_CHANNELS, AnnotationSet, Event


class PipelineError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    frame: FrameSpec = field(default_factory=FrameSpec)
    hmm: hmm.HmmConfig = field(default_factory=hmm.HmmConfig)
    sda_spsw: sda.SdaConfig = sda.SPSW_SDA_CONFIG
    sda_eyem: sda.SdaConfig = sda.EYEM_SDA_CONFIG
    sda_sixway: sda.SdaConfig = sda.SIXWAY_SDA_CONFIG
    grammar: grammar.GrammarParams = field(default_factory=grammar.GrammarParams)
    montage_path: str | None = None
    bigram_source: str = "table1"  # table1 | estimate
    seed: int = 0
    augment_cap: int = 2000
    pca_detector_dim: int = 13
    pca_sixway_dim: int = 20

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_SCHEMA = {
    "pipeline": {"seed", "montage_path", "bigram_source", "augment_cap"},
    "frontend": {"frame_s", "window_s", "fft_size", "num_filters", "num_cepstra",
                 "diff_energy_window_frames", "delta_width_first",
                 "delta_width_second", "frames_per_epoch"},
    "hmm": {"num_states", "num_components", "max_iterations", "tol_per_frame"},
    "grammar": {"epsilon_prior", "m_weight", "decay", "alpha", "gamma",
                "iterations", "window"},
}
_SDA_KEYS = {"window_length", "hidden", "outputs", "corruption", "pretrain_lr",
             "pretrain_epochs", "pretrain_batch", "finetune_lr",
             "finetune_epochs", "finetune_batch"}


def load_config(path: str) -> PipelineConfig:
    """Key/value config with sections, checked against the schema; every
    omitted key keeps its built-in default."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise PipelineError(f"cannot read config {path}")
    cfg = PipelineConfig()

    for section in parser.sections():
        base = section.split(".")[0]
        allowed = _SDA_KEYS if base == "sda" else _SCHEMA.get(section)
        if allowed is None:
            raise PipelineError(f"unknown config section [{section}]")
        unknown = set(parser[section]) - allowed
        if unknown:
            raise PipelineError(
                f"unknown keys in [{section}]: {sorted(unknown)}")

    def _sub(obj, section, casts):
        if not parser.has_section(section):
            return obj
        kwargs = {}
        for key, cast in casts.items():
            if parser.has_option(section, key):
                kwargs[key] = cast(parser.get(section, key))
        return replace(obj, **kwargs)

    frame = _sub(cfg.frame, "frontend", {
        "frame_s": float, "window_s": float, "fft_size": int,
        "num_filters": int, "num_cepstra": int,
        "diff_energy_window_frames": int, "delta_width_first": int,
        "delta_width_second": int, "frames_per_epoch": int})
    hmm_cfg = _sub(cfg.hmm, "hmm", {
        "num_states": int, "num_components": int, "max_iterations": int,
        "tol_per_frame": float})
    gram = _sub(cfg.grammar, "grammar", {
        "epsilon_prior": float, "m_weight": float, "decay": float,
        "alpha": float, "gamma": float, "iterations": int, "window": int})

    def _sda_cfg(base_cfg, section):
        casts = {"window_length": int, "outputs": int, "corruption": float,
                 "pretrain_lr": float, "pretrain_epochs": int,
                 "pretrain_batch": int, "finetune_lr": float,
                 "finetune_epochs": int, "finetune_batch": int,
                 "hidden": lambda s: tuple(int(v) for v in s.split(","))}
        return _sub(base_cfg, section, casts)

    kwargs = {}
    if parser.has_section("pipeline"):
        p = parser["pipeline"]
        if "seed" in p:
            kwargs["seed"] = p.getint("seed")
        if "montage_path" in p:
            kwargs["montage_path"] = p.get("montage_path") or None
        if "bigram_source" in p:
            kwargs["bigram_source"] = p.get("bigram_source")
        if "augment_cap" in p:
            kwargs["augment_cap"] = p.getint("augment_cap")
    cfg = replace(cfg, frame=frame, hmm=hmm_cfg, grammar=gram,
                  sda_spsw=_sda_cfg(cfg.sda_spsw, "sda.spsw"),
                  sda_eyem=_sda_cfg(cfg.sda_eyem, "sda.eyem"),
                  sda_sixway=_sda_cfg(cfg.sda_sixway, "sda.6way"),
                  **kwargs)
    if cfg.bigram_source not in ("table1", "estimate"):
        raise PipelineError(f"bigram_source must be table1|estimate, "
                            f"got {cfg.bigram_source!r}")
    if cfg.montage_path and not os.path.exists(cfg.montage_path):
        raise PipelineError(f"montage file not found: {cfg.montage_path}")
    return cfg


# ---------------------------------------------------------------------------
# Ingestion

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_recording(path: str, config: PipelineConfig) -> signal_io.Recording:
    fmt = "edf_subset" if path.lower().endswith(".edf") else "raw_matrix"
    rec = signal_io.read_recording(path, fmt)
    if abs(rec.sample_rate_hz - PIPELINE_RATE_HZ) > 1e-9:
        rec = signal_io.resample(rec, PIPELINE_RATE_HZ)
    if config.montage_path:
        rec = signal_io.apply_montage(rec, signal_io.read_montage(config.montage_path))
    return rec


# ---------------------------------------------------------------------------
# Training

def train_pipeline(config: PipelineConfig,
                   pairs: list[tuple[str, str]]) -> Bundle:
    """Full training: pass-1 HMMs, pass-1 decode of the training data, PCA and
    SdA fitting on those outputs, and the bigram table."""
    grids, anns = [], []
    for rec_path, ann_path in pairs:
        rec = load_recording(rec_path, config)
        grids.append(extract_features(rec, config.frame))
        anns.append(signal_io.read_annotations(ann_path))

    # Pass-1 corpus: per-(channel, epoch) observation blocks grouped by label.
    corpus: dict[EventLabel, list[np.ndarray]] = {lab: [] for lab in EventLabel}
    for grid, ann in zip(grids, anns):
        refs = evaluation.channel_epoch_reference_labels(
            ann, grid.num_epochs, grid.num_channels)
        for e in range(grid.num_epochs):
            for c in range(grid.num_channels):
                corpus[EventLabel(refs[e, c])].append(grid.epoch(c, e))
    missing = [lab.name for lab in EventLabel if not corpus[lab]]
    if missing:
        raise PipelineError(f"training data has no epochs for: {missing}")
    stacked = {lab: np.stack(eps) for lab, eps in corpus.items()}
    models = hmm.train(stacked, config.hmm)

    pgrids = [hmm.decode_pass1(grid, models) for grid in grids]
    epoch_refs = [evaluation.epoch_reference_labels(ann, grid.num_epochs)
                  for ann, grid in zip(anns, grids)]

    second = _train_second_pass(config, pgrids, epoch_refs)

    if config.bigram_source == "estimate":
        table = grammar.estimate_bigram(epoch_refs)
    else:
        table = grammar.default_bigram()

    manifest = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "data": {os.path.basename(p): _sha256(p)
                 for pair in pairs for p in pair},
        # Per-epoch reference labels use this tie-break priority.
        "epoch_label_priority": ["SPSW", "PLED", "GPED", "EYEM", "ARTF", "BCKG"],
    }
    return Bundle(models, second, table, manifest)


def _detector_labels(refs: np.ndarray, positive: set[int]) -> np.ndarray:
    return np.where(np.isin(refs, list(positive)), 0, 1)


def _train_second_pass(config: PipelineConfig, pgrids, epoch_refs):
    supervectors = [sda.supervector_sequence(pg) for pg in pgrids]
    all_sv = np.concatenate(supervectors)
    pca_det = sda.fit_pca(all_sv, config.pca_detector_dim)
    pca_six = sda.fit_pca(all_sv, config.pca_sixway_dim)

    det_seqs = [sda.reduce_sequence_for_detectors(pca_det.project(sv))
                for sv in supervectors]
    six_seqs = [pca_six.project(sv) for sv in supervectors]
    det_min, det_max = sda.fit_scaling(np.concatenate(det_seqs))
    six_min, six_max = sda.fit_scaling(np.concatenate(six_seqs))

    refs = np.concatenate(epoch_refs)

    def _windows(seqs, smin, smax, window):
        dummy = sda.SdaModel([], np.zeros((1, 1)), np.zeros(1), window, 0.0,
                             smin, smax)
        return np.concatenate([sda.make_windows(sda.scale_input(dummy, s), window)
                               for s in seqs])

    epi = {int(EventLabel.SPSW), int(EventLabel.GPED), int(EventLabel.PLED)}

    def _train_one(cfg: sda.SdaConfig, seqs, smin, smax, y, seed_offset):
        rng = np.random.default_rng(config.seed + seed_offset)
        x = _windows(seqs, smin, smax, cfg.window_length)
        if cfg.outputs == 2:
            x, y = _augment_binary(x, y, config.augment_cap, rng)
        stack = sda.init_stack(x.shape[1], cfg.hidden, rng)
        sda.pretrain(stack, x, cfg, rng)
        return sda.fine_tune(stack, x, y, cfg, rng, smin, smax)

    model_spsw = _train_one(config.sda_spsw, det_seqs, det_min, det_max,
                            _detector_labels(refs, epi), 101)
    model_eyem = _train_one(config.sda_eyem, det_seqs, det_min, det_max,
                            _detector_labels(refs, {int(EventLabel.EYEM)}), 102)
    model_six = _train_one(config.sda_sixway, six_seqs, six_min, six_max,
                           refs.copy(), 103)
    return sda.SecondPassModels(pca_det, pca_six, model_spsw, model_eyem,
                                model_six)


def _augment_binary(x: np.ndarray, y: np.ndarray, cap: int,
                    rng: np.random.Generator):
    """Grow the minority class with out-of-sample synthesis so the detectors
    see a usable balance; synthetic windows are clipped back to [0, 1]."""
    counts = [int(np.sum(y == c)) for c in (0, 1)]
    minority = int(np.argmin(counts))
    target = min(max(counts), cap)
    members = x[y == minority]
    if len(members) >= target or len(members) < 2:
        return x, y
    grown = sda.augment_rare(members, target, rng)
    extra = np.clip(grown[len(members):], 0.0, 1.0)
    x_out = np.concatenate([x, extra])
    y_out = np.concatenate([y, np.full(len(extra), minority, dtype=y.dtype)])
    return x_out, y_out


# ---------------------------------------------------------------------------
# Decoding

def _merge_runs(labels: np.ndarray, channel: int) -> list[Event]:
    events = []
    start = 0
    for e in range(1, len(labels) + 1):
        if e == len(labels) or labels[e] != labels[start]:
            events.append(Event(channel, float(start), float(e),
                                EventLabel(int(labels[start]))))
            start = e
    return events


def decode_recording(bundle: Bundle, rec_path: str, stop_after: int = 3,
                     config: PipelineConfig | None = None):
    """Run the pipeline on one recording. Returns (AnnotationSet hypothesis,
    dict of per-pass posterior arrays)."""
    if stop_after not in (1, 2, 3):
        raise PipelineError("stop_after must be 1, 2 or 3")
    cfg = config or PipelineConfig(**_config_kwargs(bundle.manifest))
    rec = load_recording(rec_path, cfg)
    grid = extract_features(rec, cfg.frame)
    pgrid = hmm.decode_pass1(grid, bundle.hmm_models)
    dumps = {"pass1": pgrid.posteriors}
    if stop_after == 1:
        cell_labels = pgrid.argmax_labels()  # (E, C)
        events = []
        for c in range(pgrid.num_channels):
            events.extend(_merge_runs(cell_labels[:, c], c))
        return AnnotationSet(tuple(events)), dumps

    seq2 = sda.decode_pass2(pgrid, bundle.second_pass)
    dumps["pass2"] = seq2.posteriors
    if stop_after == 2:
        labels = seq2.argmax_labels()
        return AnnotationSet(tuple(_merge_runs(labels, ALL_CHANNELS))), dumps

    labels, post3 = grammar.decode_pass3(seq2.posteriors, bundle.bigram,
                                         cfg.grammar)
    dumps["pass3"] = post3
    return AnnotationSet(tuple(_merge_runs(labels, ALL_CHANNELS))), dumps


def _config_kwargs(manifest: dict) -> dict:
    cfg = manifest.get("config", {})
    kwargs = {}
    if "frame" in cfg:
        kwargs["frame"] = FrameSpec(**cfg["frame"])
    if "grammar" in cfg:
        kwargs["grammar"] = grammar.GrammarParams(**cfg["grammar"])
    if "montage_path" in cfg:
        kwargs["montage_path"] = cfg["montage_path"]
    return kwargs


def write_posterior_csv(path: str, posteriors: np.ndarray) -> None:
    """Posterior dump: pass-1 grids get one row per (epoch, channel) cell,
    epoch sequences one row per epoch."""
    with open(path, "w", newline="") as f:
        if posteriors.ndim == 3:
            f.write("epoch,channel," + ",".join(LABEL_NAMES) + "\n")
            for e in range(posteriors.shape[0]):
                for c in range(posteriors.shape[1]):
                    vals = ",".join(f"{v:.10g}" for v in posteriors[e, c])
                    f.write(f"{e},{c},{vals}\n")
        else:
            f.write("epoch," + ",".join(LABEL_NAMES) + "\n")
            for e in range(posteriors.shape[0]):
                vals = ",".join(f"{v:.10g}" for v in posteriors[e])
                f.write(f"{e},{vals}\n")


def read_posterior_csv(path: str) -> np.ndarray:
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    if header[:2] == ["epoch", "channel"]:
        n_ep = max(int(r[0]) for r in rows) + 1
        n_ch = max(int(r[1]) for r in rows) + 1
        out = np.zeros((n_ep, n_ch, NUM_CLASSES))
        for r in rows:
            out[int(r[0]), int(r[1])] = [float(v) for v in r[2:]]
        return out
    out = np.zeros((len(rows), NUM_CLASSES))
    for r in rows:
        out[int(r[0])] = [float(v) for v in r[1:]]
    return out


# ---------------------------------------------------------------------------
# Scoring

def score_files(ref_path: str, hyp_path: str, mode: str, basis: str,
                num_channels: int = 22):
    """Confusion matrix + two-way summary for one (reference, hypothesis)
    annotation pair. The hypothesis determines the epoch count since decode
    emits full-coverage label runs."""
    ref = signal_io.read_annotations(ref_path)
    hyp = signal_io.read_annotations(hyp_path)
    if not hyp.events:
        raise PipelineError(f"empty hypothesis file {hyp_path}")
    num_epochs = int(np.ceil(max(ev.stop_s for ev in hyp.events)))
    if basis == "per_channel_event":
        ref_labels = evaluation.channel_epoch_reference_labels(
            ref, num_epochs, num_channels).reshape(-1)
        hyp_labels = evaluation.channel_epoch_reference_labels(
            hyp, num_epochs, num_channels).reshape(-1)
    elif basis == "per_epoch":
        ref_labels = evaluation.epoch_reference_labels(ref, num_epochs)
        hyp_labels = evaluation.epoch_reference_labels(hyp, num_epochs)
    else:
        raise PipelineError(f"unknown basis {basis!r}")
    matrix = evaluation.confusion(ref_labels, hyp_labels, mode, basis)
    summary = (evaluation.sens_spec(matrix) if mode == "two_way"
               else evaluation.sens_spec(
                   evaluation.confusion(ref_labels, hyp_labels, "two_way", basis)))
    return matrix, summary


def write_score_report(matrix, summary, out_prefix: str) -> None:
    with open(out_prefix + ".txt", "w") as f:
        f.write(f"mode={matrix.mode} basis={matrix.basis} "
                f"items={int(matrix.total)}\n\n")
        f.write(matrix.format_text() + "\n\n")
        f.write(f"sensitivity={_fmt(summary.sensitivity)} "
                f"false_alarm={_fmt(summary.false_alarm)} "
                f"specificity={_fmt(summary.specificity)}\n")
    with open(out_prefix + ".csv", "w", newline="") as f:
        f.write("ref\\hyp," + ",".join(matrix.labels) + "\n")
        for i, name in enumerate(matrix.labels):
            f.write(name + "," + ",".join(f"{int(v)}" for v in matrix.counts[i])
                    + "\n")


def _fmt(v):
    return "missing" if v is None else f"{v:.2f}"
