"""Manifest-driven pipeline driver: simulate -> enhance -> vad -> units -> eval.

Configuration lives in an INI-style `pipeline.cfg`; every subcommand reads
and extends `<work_dir>/manifest.tsv`, never removing keys a prior stage
wrote. Exit codes: 0 success, 1 partial (some rows skipped), 2 fatal.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, StftConfig, istft, read_wav, stft, write_wav
from .gridnet import GridNetConfig, enhance, load_weights
from .manifest import ManifestRow, read_manifest, write_manifest
from .masking import apply_mask, oracle_cirm
from .metrics import METRIC_ORDER, eval_corpus
from .mixing import MixtureSpec, simulate_corpus
from .units import (Codebook, assign_units, dedup, kmeans_fit, load_codebook,
                    logmel, save_codebook, write_units)
from .vad import VadConfig, trim_silence

_SILENT_PEAK = 1.0 / 32768.0

_SCHEMA = {
    "paths": {"work_dir", "clean_manifest", "noise_manifest", "weights", "codebook"},
    "simulate": {"snr_low", "snr_high", "peak_ceiling"},
    "stft": {"fft_size", "hop"},
    "gridnet": {"channels", "num_blocks", "hidden", "heads",
                "unfold_kernel", "unfold_stride", "mask_bound"},
    "vad": {"frame_ms", "threshold_db", "hangover_frames", "collar_ms"},
    "units": {"k", "n_mels", "max_iters", "fit_on", "normalize"},
    "eval": {"metrics"},
    "run": {"seed", "jobs"},
}


@dataclass
class PipelineConfig:
    work_dir: Path
    clean_manifest: Path | None = None
    noise_manifest: Path | None = None
    weights: Path | None = None
    codebook: Path | None = None
    snr_low: float = -35.0
    snr_high: float = -15.0
    peak_ceiling: float = 0.99
    stft: StftConfig = field(default_factory=StftConfig)
    gridnet: GridNetConfig = field(default_factory=GridNetConfig)
    vad: VadConfig = field(default_factory=VadConfig)
    k: int = 100
    n_mels: int = 40
    max_iters: int = 100
    fit_on: str = "enhanced"
    normalize: bool = False
    metrics: tuple[str, ...] = ("si_sdr", "stoi")
    seed: int = 0
    jobs: int = 1

    @property
    def manifest_path(self) -> Path:
        return self.work_dir / "manifest.tsv"


def load_config(path) -> PipelineConfig:
    """Parse and validate pipeline.cfg; unknown sections/keys are rejected and
    every referenced input path must exist."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"{path}: unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ValueError(f"{path}: unknown key {key!r} in section [{section}]")
    if "paths" not in parser or "work_dir" not in parser["paths"]:
        raise ValueError(f"{path}: [paths] work_dir is required")

    def get(section, key, cast, default):
        if section in parser and key in parser[section]:
            return cast(parser[section][key])
        return default

    paths = parser["paths"]
    base = path.parent

    def resolve(key, must_exist):
        if key not in paths:
            return None
        p = Path(paths[key])
        if not p.is_absolute():
            p = base / p
        if must_exist and not p.exists():
            raise FileNotFoundError(f"{path}: [paths] {key} does not exist: {p}")
        return p

    stft_cfg = StftConfig(get("stft", "fft_size", int, 512), get("stft", "hop", int, 256))
    mask_bound = get("gridnet", "mask_bound", float, None)
    gridnet_cfg = GridNetConfig(
        channels=get("gridnet", "channels", int, 32),
        num_blocks=get("gridnet", "num_blocks", int, 4),
        hidden=get("gridnet", "hidden", int, 128),
        heads=get("gridnet", "heads", int, 4),
        unfold_kernel=get("gridnet", "unfold_kernel", int, 1),
        unfold_stride=get("gridnet", "unfold_stride", int, 1),
        stft=stft_cfg,
        mask_bound=mask_bound,
    )
    vad_cfg = VadConfig(
        frame_ms=get("vad", "frame_ms", int, 30),
        threshold_db=get("vad", "threshold_db", float, -40.0),
        hangover_frames=get("vad", "hangover_frames", int, 8),
        collar_ms=get("vad", "collar_ms", int, 100),
    )
    metrics = tuple(
        m.strip() for m in get("eval", "metrics", str, "si_sdr,stoi").split(",") if m.strip()
    )
    cfg = PipelineConfig(
        work_dir=resolve("work_dir", must_exist=False),
        clean_manifest=resolve("clean_manifest", must_exist=True),
        noise_manifest=resolve("noise_manifest", must_exist=True),
        weights=resolve("weights", must_exist=True),
        codebook=resolve("codebook", must_exist=True),
        snr_low=get("simulate", "snr_low", float, -35.0),
        snr_high=get("simulate", "snr_high", float, -15.0),
        peak_ceiling=get("simulate", "peak_ceiling", float, 0.99),
        stft=stft_cfg,
        gridnet=gridnet_cfg,
        vad=vad_cfg,
        k=get("units", "k", int, 100),
        n_mels=get("units", "n_mels", int, 40),
        max_iters=get("units", "max_iters", int, 100),
        fit_on=get("units", "fit_on", str, "enhanced"),
        normalize=get("units", "normalize", lambda s: s.lower() in ("1", "true", "yes"),
                      False),
        metrics=metrics,
        seed=get("run", "seed", int, 0),
        jobs=get("run", "jobs", int, 1),
    )
    if cfg.fit_on not in ("enhanced", "clean"):
        raise ValueError(f"{path}: units fit_on must be 'enhanced' or 'clean'")
    cfg.work_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def _load_rows(cfg: PipelineConfig) -> list[ManifestRow]:
    if not cfg.manifest_path.exists():
        raise FileNotFoundError(f"manifest not found (run simulate first): {cfg.manifest_path}")
    return read_manifest(cfg.manifest_path)


# ---------------------------------------------------------------------------
# Stage commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: PipelineConfig, args) -> int:
    if cfg.clean_manifest is None or cfg.noise_manifest is None:
        raise ValueError("simulate needs [paths] clean_manifest and noise_manifest")
    spec = MixtureSpec(cfg.snr_low, cfg.snr_high, cfg.seed, cfg.peak_ceiling)
    rows, failures = simulate_corpus(cfg.clean_manifest, cfg.noise_manifest, spec, cfg.work_dir)
    for failure in failures:
        print(f"simulate: skipped {failure}", file=sys.stderr)
    print(f"simulate: {len(rows)} mixtures -> {cfg.manifest_path}")
    return 1 if failures else 0


def _enhance_row(row: ManifestRow, cfg: PipelineConfig, weights, out_dir: Path,
                 oracle: bool) -> tuple[ManifestRow, bool]:
    mixture = read_wav(row.path)
    if oracle:
        clean = read_wav(row.attrs["clean"])
        mix_spec = stft(mixture, cfg.stft)
        clean_spec = stft(clean, cfg.stft)
        enhanced = istft(apply_mask(oracle_cirm(clean_spec, mix_spec), mix_spec))
    else:
        enhanced = enhance(mixture, weights, cfg.gridnet)
    out_path = out_dir / f"{row.utt_id}.wav"
    silent = bool(np.max(np.abs(enhanced.samples)) < _SILENT_PEAK)
    if silent:
        # keep a valid file: write digital silence rather than failing
        enhanced = AudioBuffer(np.zeros(len(enhanced.samples)), enhanced.sample_rate)
    write_wav(out_path, enhanced)
    return row.with_attrs(enhanced=str(out_path)), silent


def cmd_enhance(cfg: PipelineConfig, args) -> int:
    rows = _load_rows(cfg)
    oracle = bool(getattr(args, "oracle", False))
    weights = None
    if not oracle:
        if cfg.weights is None:
            raise ValueError("enhance needs [paths] weights or --oracle")
        weights = load_weights(cfg.weights, cfg.gridnet)

    out_dir = cfg.work_dir / "enhanced"
    out_dir.mkdir(parents=True, exist_ok=True)

    updated: list[ManifestRow] = []
    skipped: list[str] = []
    silent_count = 0
    jobs = max(1, getattr(args, "jobs", None) or cfg.jobs)

    def work(row):
        return _enhance_row(row, cfg, weights, out_dir, oracle)

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(lambda r: _try(work, r), rows))
    for row, result in zip(rows, results):
        if isinstance(result, Exception):
            skipped.append(f"{row.utt_id}: {result}")
            updated.append(row)
        else:
            new_row, silent = result
            silent_count += silent
            updated.append(new_row)

    write_manifest(cfg.manifest_path, updated)
    for failure in skipped:
        print(f"enhance: skipped {failure}", file=sys.stderr)
    if silent_count:
        print(f"enhance: warning: {silent_count} silent outputs", file=sys.stderr)
    print(f"enhance: {len(rows) - len(skipped)} utterances -> {out_dir}")
    return 1 if skipped else 0


def _try(fn, *argv):
    try:
        return fn(*argv)
    except Exception as exc:
        return exc


def cmd_vad(cfg: PipelineConfig, args) -> int:
    rows = _load_rows(cfg)
    out_dir = cfg.work_dir / "trimmed"
    out_dir.mkdir(parents=True, exist_ok=True)

    updated: list[ManifestRow] = []
    silent_count = 0
    for row in rows:
        source = row.attrs.get("enhanced", row.path)
        buf = read_wav(source)
        trimmed, kept = trim_silence(buf, cfg.vad)
        if len(trimmed.samples) == 0:
            updated.append(row.with_attrs(vad_kept="0.000000", silent="1"))
            silent_count += 1
            continue
        out_path = out_dir / f"{row.utt_id}.wav"
        write_wav(out_path, trimmed)
        updated.append(row.with_attrs(trimmed=str(out_path), vad_kept=f"{kept:.6f}"))

    write_manifest(cfg.manifest_path, updated)
    if silent_count == len(rows):
        print("vad: warning: every utterance was detected as silent", file=sys.stderr)
    print(f"vad: {len(rows) - silent_count} utterances kept, {silent_count} silent")
    return 0


def _units_source(row: ManifestRow, fit_on: str) -> str | None:
    if fit_on == "clean":
        return row.attrs.get("clean")
    if "silent" in row.attrs:
        return None
    return row.attrs.get("trimmed") or row.attrs.get("enhanced") or row.path


def cmd_units(cfg: PipelineConfig, args) -> int:
    rows = _load_rows(cfg)
    do_fit = bool(getattr(args, "fit", False))
    do_assign = bool(getattr(args, "assign", False))
    if not do_fit and not do_assign:
        do_fit = do_assign = True
    k = getattr(args, "k", None) or cfg.k

    units_dir = cfg.work_dir / "units"
    feats_dir = cfg.work_dir / "feats"
    units_dir.mkdir(parents=True, exist_ok=True)
    feats_dir.mkdir(parents=True, exist_ok=True)
    codebook_path = cfg.codebook or units_dir / "codebook.kmc"

    if do_fit:
        blocks = []
        for row in rows:
            source = _units_source(row, cfg.fit_on)
            if source is None:
                continue
            blocks.append(logmel(read_wav(source), cfg.n_mels, cfg.stft).rows)
        if not blocks:
            raise RuntimeError("units --fit: no non-silent utterances to fit on")
        codebook = kmeans_fit(np.concatenate(blocks), k, cfg.max_iters, cfg.seed,
                              normalize=cfg.normalize)
        save_codebook(codebook_path, codebook)
        print(f"units: fitted k={codebook.k} codebook (inertia {codebook.inertia:.3f}) "
              f"-> {codebook_path}")

    exit_code = 0
    if do_assign:
        if not Path(codebook_path).exists():
            raise FileNotFoundError(f"units --assign: codebook not found: {codebook_path}")
        codebook = load_codebook(codebook_path)
        sequences = []
        updated: list[ManifestRow] = []
        units_path = units_dir / "units.tsv"
        for row in rows:
            source = _units_source(row, "enhanced")
            if source is None:
                updated.append(row)
                continue
            feat = logmel(read_wav(source), cfg.n_mels, cfg.stft)
            sequences.append(dedup(assign_units(feat, codebook, row.utt_id,
                                                normalize=cfg.normalize)))
            updated.append(row.with_attrs(units=str(units_path)))
        if not sequences:
            raise RuntimeError("units --assign: no non-silent utterances")
        write_units(units_path, sequences)
        write_manifest(cfg.manifest_path, updated)
        print(f"units: {len(sequences)} unit sequences -> {units_path}")
    return exit_code


def cmd_eval(cfg: PipelineConfig, args) -> int:
    rows = _load_rows(cfg)
    metrics = list(getattr(args, "metrics", None) or cfg.metrics)
    report = eval_corpus(rows, metrics)
    reports_dir = cfg.work_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    report_path = reports_dir / "eval.tsv"
    report_path.write_text(report.format(), encoding="utf-8")
    for utt_id, reason in report.skipped:
        print(f"eval: skipped {utt_id}: {reason}", file=sys.stderr)
    means = "  ".join(f"{m}={report.means[m]:.4f}" for m in report.metrics)
    print(f"eval: {len(report.rows)} rows -> {report_path}  means: {means}")
    return 1 if report.skipped else 0


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def _unit_agreement(cfg: PipelineConfig, rows: list[ManifestRow],
                    codebook: Codebook) -> tuple[float, float]:
    """Frame-weighted unit agreement: (enhanced vs clean, noisy vs clean).

    Uses untrimmed signals so frames line up one-to-one.
    """
    match_enh = match_noisy = total = 0
    for row in rows:
        if "silent" in row.attrs or "enhanced" not in row.attrs:
            continue
        clean_units = assign_units(
            logmel(read_wav(row.attrs["clean"]), cfg.n_mels, cfg.stft), codebook,
            normalize=cfg.normalize).units
        enh_units = assign_units(
            logmel(read_wav(row.attrs["enhanced"]), cfg.n_mels, cfg.stft), codebook,
            normalize=cfg.normalize).units
        noisy_units = assign_units(
            logmel(read_wav(row.path), cfg.n_mels, cfg.stft), codebook,
            normalize=cfg.normalize).units
        n = min(len(clean_units), len(enh_units), len(noisy_units))
        match_enh += int(np.sum(clean_units[:n] == enh_units[:n]))
        match_noisy += int(np.sum(clean_units[:n] == noisy_units[:n]))
        total += n
    if total == 0:
        raise RuntimeError("unit agreement: no comparable utterances")
    return match_enh / total, match_noisy / total


def _stage_done(cfg: PipelineConfig, stage: str) -> bool:
    if not cfg.manifest_path.exists():
        return False
    rows = read_manifest(cfg.manifest_path)
    if not rows:
        return False
    if stage == "simulate":
        return True
    if stage == "enhance":
        return all("enhanced" in r.attrs for r in rows)
    if stage == "vad":
        return all("vad_kept" in r.attrs for r in rows)
    if stage == "units":
        return all("units" in r.attrs or "silent" in r.attrs for r in rows)
    if stage == "eval":
        return (cfg.work_dir / "reports" / "eval.tsv").exists()
    return False


def cmd_pipeline(cfg: PipelineConfig, args) -> int:
    stages = (
        ("simulate", cmd_simulate),
        ("enhance", cmd_enhance),
        ("vad", cmd_vad),
        ("units", cmd_units),
        ("eval", cmd_eval),
    )
    resume = bool(getattr(args, "resume", False))
    partial = False
    for name, fn in stages:
        if resume and _stage_done(cfg, name):
            print(f"pipeline: {name}: resumed (already complete)")
            continue
        try:
            status = fn(cfg, args)
        except Exception as exc:
            print(f"pipeline: stage {name} failed: {exc}", file=sys.stderr)
            return 2
        partial = partial or status != 0

    rows = _load_rows(cfg)
    codebook_path = cfg.codebook or cfg.work_dir / "units" / "codebook.kmc"
    codebook = load_codebook(codebook_path)
    agree_enh, agree_noisy = _unit_agreement(cfg, rows, codebook)

    reports_dir = cfg.work_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    summary = (
        f"utterances\t{len(rows)}\n"
        f"unit_agreement_enhanced_vs_clean\t{agree_enh:.6f}\n"
        f"unit_agreement_noisy_vs_clean\t{agree_noisy:.6f}\n"
    )
    (reports_dir / "summary.tsv").write_text(summary, encoding="utf-8")
    print(summary, end="")
    return 1 if partial else 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="se2units",
        description="speech enhancement to discrete units pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **extra_flags):
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", default="pipeline.cfg")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
        for flag, kwargs in extra_flags.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(fn=fn)
        return p

    add("simulate", cmd_simulate)
    add("enhance", cmd_enhance, **{"--oracle": {"action": "store_true"}})
    add("vad", cmd_vad)
    add("units", cmd_units, **{
        "--fit": {"action": "store_true"},
        "--assign": {"action": "store_true"},
        "--k": {"type": int, "default": None},
    })
    add("eval", cmd_eval, **{
        "--metrics": {"type": lambda s: [m.strip() for m in s.split(",")],
                      "default": None,
                      "help": f"comma-separated subset of {','.join(METRIC_ORDER)}"},
    })
    add("pipeline", cmd_pipeline, **{
        "--oracle": {"action": "store_true"},
        "--resume": {"action": "store_true"},
    })
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.jobs is not None:
            cfg.jobs = args.jobs
        return args.fn(cfg, args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
