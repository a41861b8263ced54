"""
Description:
    Synthesize underwater images across the six merged Jerlov water types, train the encoder-decoder
    together with its nuisance classifier, then evaluate the enhancement and analyse the latent code.

Usage:
    uie_dal.py synth (--scenes DIR | --procedural N) --out DIR [--coeffs FILE] [--draws N] [--seed S] [--size S] [--depth-units U] [--config FILE] [-v | -q]
    uie_dal.py train --manifest FILE --out DIR [--config FILE] [--no-adversarial] [--resume FILE] [--epochs N] [--seed S] [-v | -q]
    uie_dal.py eval --manifest FILE --out FILE (--checkpoint FILE | --raw) [--split SPLIT] [--per-channel] [-v | -q]
    uie_dal.py probe --checkpoint FILE --manifest FILE --out FILE [--split SPLIT] [--config FILE] [--seed S] [--zero-skips] [-v | -q]
    uie_dal.py gradcheck [--seed S] [--tolerance TOL] [-v | -q]
    uie_dal.py (-h | --help)

Options:
    -h, --help              Show this message
    -v, --verbose           Output debug messages
    -q, --quiet             Only output warnings and errors
    --scenes DIR            Directory of <id>_rgb.png / <id>_depth.png scene pairs
    --procedural N          Generate N procedural scenes instead of reading --scenes
    --size S                Height and width of procedural scenes [default: 32]
    --depth-units U         Meters per raw unit of 16-bit depth maps [default: 0.001]
    --coeffs FILE           Water type table (class_id label n_r n_g n_b), the packaged table by default
    --draws N               Random degradations per scene and water type [default: 6]
    --seed S                Master seed, overrides the config file
    --out PATH              Output directory (synth, train) or file (eval report CSV, probe summary JSON)
    --manifest FILE         Dataset manifest written by synth
    --config FILE           JSON file with optional sections synthesis, architecture, training, probe
    --no-adversarial        Set the adversarial weight to 0 and train without a classifier (encoder-decoder baseline)
    --resume FILE           Continue training from a checkpoint
    --epochs N              Number of main-loop epochs, overrides the config file
    --checkpoint FILE       Trained model checkpoint
    --raw                   Score the degraded inputs themselves against ground truth
    --split SPLIT           train, val or test [default: test]
    --per-channel           Average SSIM over RGB channels instead of using luma
    --zero-skips            Also report the SSIM of the decoder with every skip tensor zeroed
    --tolerance TOL         Largest accepted relative gradient error [default: 1e-6]

Examples:
    # 200 procedural 32x32 scenes, one draw per water type
    uie_dal.py synth --procedural 200 --draws 1 --out data
    # adversarial model and its baseline
    uie_dal.py train --manifest data/manifest.jsonl --out runs/adv
    uie_dal.py train --manifest data/manifest.jsonl --out runs/base --no-adversarial
    # per water type SSIM / PSNR on the test split
    uie_dal.py eval --checkpoint runs/adv/final.ckpt --manifest data/manifest.jsonl --out adv.csv
    # latent analysis
    uie_dal.py probe --checkpoint runs/adv/final.ckpt --manifest data/manifest.jsonl --out adv.json

Exit codes:
    0 success, 1 usage or configuration error, 2 data or format error, 3 numeric failure
"""

import json
import logging
import os
import sys

from docopt import DocoptExit, docopt

from .analysis.latent import ProbeConfig, analyze_latents, write_pca_csv, write_summary_json
from .datastore.checkpoint import TrainingState, load_checkpoint
from .datastore.manifest import load_sample_set, write_dataset
from .formation.synthesis import SynthesisConfig, load_scenes, make_procedural_scenes, synthesize_dataset
from .formation.water_types import load_water_types
from .lib.errors import ConfigError, InvalidInputError, NumericError, UnderwaterDALError
from .lib.io_util import arg_values, atomic_write_text, setup_logging, verbose_level
from .metrics.report import aggregate_by_class, evaluate_identity_baseline, format_report, write_report_csv
from .models.networks import ArchitectureConfig, build_model, enhance
from .models.verification import run_gradcheck_suite, suite_passed
from .training.procedure import TrainConfig, train_model

logger = logging.getLogger(__name__)

CONFIG_SECTIONS = ("synthesis", "architecture", "training", "probe")


def load_config(filename):
    if not filename:
        return {}
    try:
        with open(filename, "r", encoding="utf-8") as f:
            config = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{filename}: {e}") from None
    if not isinstance(config, dict):
        raise ConfigError(f"{filename}: expected a JSON object")
    unknown = set(config) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"{filename}: unknown config sections {sorted(unknown)}")
    return config


def _int(arguments, key):
    return arg_values(arguments[key], int, 1, is_single=True)


def _float(arguments, key):
    return arg_values(arguments[key], float, 1, is_single=True)


def synth(arguments, output_flag):
    config = SynthesisConfig.from_dict(load_config(arguments["--config"]).get("synthesis", {}))
    specs = load_water_types(arguments["--coeffs"])
    seed = _int(arguments, "--seed") or 0
    units = _float(arguments, "--depth-units")
    if arguments["--procedural"]:
        scenes = make_procedural_scenes(_int(arguments, "--procedural"), _int(arguments, "--size"), seed)
    else:
        scenes = load_scenes(arguments["--scenes"], units)
    samples = synthesize_dataset(scenes, specs, _int(arguments, "--draws"), seed, config, progress=output_flag >= 1)
    entries = write_dataset(scenes, samples, arguments["--out"], units, progress=output_flag >= 1)
    counts = {s: sum(e.split == s for e in entries) for s in ("train", "val", "test")}
    logger.info(f"Split sizes {counts}")


def train(arguments, output_flag):
    config = load_config(arguments["--config"])
    out_dir = arguments["--out"]
    if arguments["--resume"]:
        ckpt = load_checkpoint(arguments["--resume"])
        bundle, state = ckpt.to_bundle(), ckpt.state
        training = {**ckpt.training, **config.get("training", {})}
        architecture = ckpt.architecture
    else:
        bundle, state = None, None
        training = dict(config.get("training", {}))
        architecture = ArchitectureConfig.from_dict(config.get("architecture", {}))
    if arguments["--seed"] is not None:
        training["seed"] = _int(arguments, "--seed")
    if arguments["--epochs"] is not None:
        training["epochs"] = _int(arguments, "--epochs")
    if arguments["--no-adversarial"]:
        training["lambda_a"] = 0.0
    train_config = TrainConfig.from_dict(training)
    if state is not None and state.seed != train_config.seed:
        raise ConfigError(f"checkpoint was trained with seed {state.seed}, not {train_config.seed}")
    if bundle is not None and bundle.classifier is None and train_config.lambda_a > 0:
        raise ConfigError(f"{arguments['--resume']} has no classifier; resume it with --no-adversarial")

    train_set = load_sample_set(arguments["--manifest"], "train", progress=output_flag >= 1)
    val_set = load_sample_set(arguments["--manifest"], "val", progress=output_flag >= 1)
    height, width = train_set.degraded.shape[1:3]
    if (height, width) != (architecture.height, architecture.width):
        raise ConfigError(f"images are {height}x{width}, architecture expects {architecture.height}x{architecture.width}")
    if bundle is None:
        # the baseline carries no classifier at all
        bundle = build_model(architecture, train_config.seed, with_classifier=train_config.lambda_a > 0)
        state = TrainingState(seed=train_config.seed)

    os.makedirs(out_dir, exist_ok=True)
    used = {"architecture": architecture.to_dict(), "training": train_config.to_dict()}
    atomic_write_text(os.path.join(out_dir, "config.json"), json.dumps(used, sort_keys=True, indent=2) + "\n", "training config")
    train_model(bundle, train_set, val_set, train_config, state, out_dir, progress=output_flag >= 1)


def evaluate(arguments, output_flag):
    split = arguments["--split"]
    samples = load_sample_set(arguments["--manifest"], split, progress=output_flag >= 1)
    per_channel = bool(arguments["--per-channel"])
    if arguments["--raw"]:
        report = evaluate_identity_baseline(samples.degraded, samples.clear, samples.class_ids, per_channel=per_channel)
        title = f"input vs ground truth ({split})"
    else:
        bundle = load_checkpoint(arguments["--checkpoint"]).to_bundle()
        outputs = enhance(bundle, samples.degraded)
        report = aggregate_by_class(zip(outputs, samples.clear, samples.class_ids), per_channel=per_channel)
        title = f"{arguments['--checkpoint']} ({split})"
    write_report_csv(report, arguments["--out"])
    if output_flag >= 1:
        print(format_report(report, title))


def probe(arguments, output_flag):
    config = load_config(arguments["--config"])
    ckpt = load_checkpoint(arguments["--checkpoint"])
    seed = _int(arguments, "--seed") if arguments["--seed"] is not None else ckpt.state.seed
    samples = load_sample_set(arguments["--manifest"], arguments["--split"], progress=output_flag >= 1)
    summary, pca, records = analyze_latents(
        ckpt.to_bundle(),
        samples,
        seed,
        ProbeConfig.from_dict(config.get("probe", {})),
        zero_skips=bool(arguments["--zero-skips"]),
    )
    root, _ = os.path.splitext(arguments["--out"])
    summary["split"] = arguments["--split"]
    write_pca_csv(pca, records, f"{root}_pca.csv")
    write_summary_json(summary, arguments["--out"])


def gradcheck(arguments, output_flag):
    results = run_gradcheck_suite(_int(arguments, "--seed") or 0, _float(arguments, "--tolerance"))
    if output_flag >= 1:
        for report, expected in results:
            print(report.summary() + ("" if expected else " (expected to fail)"))
    if not suite_passed(results):
        raise NumericError("gradient verification failed")


COMMANDS = {"synth": synth, "train": train, "eval": evaluate, "probe": probe, "gradcheck": gradcheck}


def main(arguments: dict):
    output_flag = verbose_level(arguments)
    setup_logging(output_flag)
    for name, command in COMMANDS.items():
        if arguments[name]:
            command(arguments, output_flag)
            return


def dispatch(argv=None) -> int:
    """Run one subcommand and map its outcome to an exit code"""
    try:
        arguments = docopt(__doc__, argv=argv)
    except DocoptExit as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:
        return 0 if e.code is None else int(e.code) if isinstance(e.code, int) else 1
    try:
        main(arguments)
    except UnderwaterDALError as e:
        logger.error(str(e))
        return e.exit_code
    except FileNotFoundError as e:
        logger.error(str(e))
        return InvalidInputError.exit_code
    return 0
