"""
Command bodies behind the ranksight CLI

Each cmd_* resolves its inputs from a RunConfig, calls the module
operations, writes its artifacts and prints a short summary.
"""

import csv
import json
import os

import numpy as np

from core.condense import (build_manifest, cohort_errors, cohort_suite, condense_select, condense_top,
                           probe_suite, random_select, read_manifest, sample_correlations, subset_fidelity,
                           write_manifest)
from core.controller import load_checkpoint
from core.errors import ConfigError, EvaluatorError
from core.evaluator import (build_toy_profile, evaluate, get_evaluator, load_or_build_profile, measure_speedup,
                            retrain, save_profile)
from core.netmodel import Scheme, apply_scheme, load_model, save_model, scheme_speedup
from core.reward import RewardConfig
from core.search import (ExploredPoint, SearchSettings, holdout_report, read_log, report_rows, run_search,
                         select_best, top_k, window_summary, write_report_csv)
from core.space import build_space, guided_energies, guided_manual_scheme, manual_scheme, sensitivity_sweep
from core.utils import (format_bytes, format_ms, log_action, print_info, print_success, print_table, print_warning,
                        setup_logging)

# Offsets from the run seed; search uses +0 and +1 for the controller and sampling
COHORT_SEED_OFFSET = 2
PROBE_SEED_OFFSET = 3
RANDOM_SUBSET_SEED_OFFSET = 4
RETRAIN_SEED_OFFSET = 5

RANDOM_SUBSET_TRIALS = 20


def _announce(config):
    """Log the resolved config and make sure the output directory exists"""
    setup_logging().info(f"resolved config for mode={config.mode}:\n{config.resolved_json()}")
    os.makedirs(config.paths.out_dir, exist_ok=True)


def _write_json(payload, path, action):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2)
    log_action(action, path)


def load_context(config):
    """(model, profile); profile is None only for external evaluators with an explicit model"""
    needs_profile = config.evaluator.kind != 'external' or not config.paths.model_path
    profile = load_or_build_profile(config.paths.profile_dir, config.seed, config.profile.epochs) \
        if needs_profile else None
    model = load_model(config.paths.model_path) if config.paths.model_path else profile.model
    return model, profile


def split_for(config, profile, name):
    """Dataset behind a split name; condensed reads its sample ids from the manifest"""
    if profile is None:
        return None
    if name == 'condensed':
        path = config.paths.manifest
        if not os.path.exists(path):
            raise ConfigError(f"condensed split requested but {path} does not exist; run condense first")
        return profile.splits['dev'].subset(read_manifest(path)['selected'])
    return profile.splits[name]


def evaluator_for(config, profile, name, with_per_sample=False):
    """Evaluator bound to one split

    External evaluators without a local profile only get the split name and
    resolve the data themselves.
    """
    dataset = split_for(config, profile, name)
    if config.evaluator.kind == 'external' and dataset is None:
        from backends.external_backend import ExternalEvaluator
        return ExternalEvaluator(config.evaluator.command, name, with_per_sample, None, config.evaluator.timeout)
    return get_evaluator(config.evaluator.kind, dataset, with_per_sample,
                         command=config.evaluator.command, timeout=config.evaluator.timeout)


def default_guidance(model, config):
    """Excluded and conservative layers for the guided preset

    Without explicit lists the readout layer is excluded and the first
    layer gets the conservative range.
    """
    names = model.searchable_names
    excluded = config.space.excluded if config.space.excluded is not None else names[-1:]
    conservative = config.space.conservative if config.space.conservative is not None else names[:1]
    return list(excluded), list(conservative)


def resolve_space(config, model):
    """Search space from the configured preset, energies and per-layer overrides"""
    if config.space.preset == 'guided':
        excluded, conservative = default_guidance(model, config)
    else:
        excluded, conservative = (config.space.excluded or []), (config.space.conservative or [])
    rows = guided_energies(model, config.space.energies, excluded, conservative,
                           config.space.conservative_energies, config.space.per_layer)
    return build_space(model, rows)


def search_settings(config):
    return SearchSettings(
        max_steps=config.search.max_steps,
        learning_rate=config.controller.learning_rate,
        hidden=config.controller.hidden,
        embed=config.controller.embed,
        seed=config.seed,
        top_k=config.search.top_k,
        use_baseline=config.controller.use_baseline,
        baseline_decay=config.controller.baseline_decay,
        batch_size=config.controller.batch_size,
        log_every=config.search.log_every,
    )


def proxy_baseline(config, model, proxy_evaluator, profile):
    """w_b on the proxy split, falling back to the full dev error when the proxy is error-free"""
    if config.reward.baseline_error is not None:
        return config.reward.baseline_error
    baseline = proxy_evaluator.evaluate(model).aggregate
    if baseline <= 0.0 and profile is not None:
        setup_logging().info(f"baseline error on proxy split is 0, using dev error {profile.baseline_error:.4f}")
        return profile.baseline_error
    return baseline


def explored_from_log(path):
    """Explored points rebuilt from the accepted steps of a search log"""
    return [ExploredPoint(Scheme(tuple(r['scheme'])), float(r['error']), float(r['speedup']),
                          int(r['step']), float(r['reward']))
            for r in read_log(path) if not r['rejected']]


def cmd_profile(config):
    """Train the toy profile for config.seed and cache it under paths.profile_dir"""
    _announce(config)
    profile = build_toy_profile(config.seed, config.profile.epochs)
    save_profile(profile, config.paths.profile_dir)
    log_action("profile", config.paths.profile_dir)
    rows = [{'Split': name, 'Samples': len(split), 'Noisy': int(np.sum(split.noisy))}
            for name, split in profile.splits.items()]
    print_table(rows, ['Split', 'Samples', 'Noisy'], "Toy Profile")
    print_success(f"Baseline dev error {profile.baseline_error:.2f}% "
                  f"(clean dev {profile.clean_dev_error:.2f}%, test {profile.test_error:.2f}%)")
    return profile


def cmd_sweep(config):
    """Single-layer sensitivity sweep on dev, written to sensitivity.csv

    The printed table pivots layers against energies and shows the error
    increase over the uncompressed baseline.
    """
    _announce(config)
    model, profile = load_context(config)
    evaluator = evaluator_for(config, profile, 'dev')
    report = sensitivity_sweep(model, evaluator, config.sweep.energies, workers=config.evaluator.workers,
                               layers=config.sweep.layers)
    path = config.paths.artifact('sensitivity.csv')
    report.to_csv(path)
    log_action("sweep", path)

    energies = [float(e) for e in config.sweep.energies]
    pivot = {}
    for row in report.rows():
        pivot.setdefault(row['layer'], {'Layer': row['layer']})[f"{row['energy']:g}"] = row['delta_vs_baseline']
    print_table(list(pivot.values()), ['Layer'] + [f"{e:g}" for e in energies],
                f"Error increase over baseline {report.baseline_error:.2f}%")
    print_success(f"Sensitivity report written to {path}")
    return report


def cmd_search(config):
    """Run or resume the rank search on the proxy split

    Writes the JSONL log, the controller checkpoint, explored.json and
    summary.json. A run whose log already holds steps continues from it.
    """
    _announce(config)
    if config.reward.target_speedup is None:
        raise ConfigError("reward.target_speedup is required for search runs")
    model, profile = load_context(config)
    proxy = evaluator_for(config, profile, config.search.proxy)
    reward = RewardConfig(config.reward.mode, proxy_baseline(config, model, proxy, profile),
                          config.reward.target_speedup, config.reward.punish_slope, config.reward.punish_offset)
    space = resolve_space(config, model)
    log_path = config.paths.search_log
    result = run_search(model, space, proxy, reward, search_settings(config), log_path=log_path,
                        checkpoint_path=config.paths.artifact('controller.lrcp'))
    log_action("search", f"log={log_path} steps={len(result.records)}")

    explored = [{'step': p.step, 'scheme': list(p.scheme), 'error': p.error, 'speedup': p.speedup,
                 'reward': p.reward} for p in result.explored]
    _write_json({'baseline_error': reward.baseline_error, 'target_speedup': reward.target_speedup,
                 'space': space.to_dict(), 'explored': explored},
                config.paths.artifact('explored.json'), "explored")
    _write_json(result.summary, config.paths.artifact('summary.json'), "summary")

    if not result.explored:
        print_warning("No scheme reached the target speedup")
        return result
    rows = [{'Step': p.step, 'Scheme': ' '.join(str(r) for r in p.scheme), 'Error %': p.error,
             'Speedup': p.speedup} for p in top_k(list(result.explored), config.search.top_k)]
    print_table(rows, ['Step', 'Scheme', 'Error %', 'Speedup'], f"Top {config.search.top_k} explored schemes")
    summary, runtime = result.summary, result.summary['runtime']
    print_success(f"{summary['steps']} steps, {summary['evaluator_calls']} evaluations "
                  f"({format_ms(runtime['total_eval_ms'])} evaluating, RSS {format_bytes(runtime['rss_bytes'])})")
    return result


def cmd_condense(config):
    """Build the condensed dev split and report how well it tracks the full split

    Samples are ranked by correlation with the full-set error across the
    cohort suite. condense.size keeps a fixed number of them, otherwise
    condense.correl_min is the threshold. Fidelity is scored on a separate
    suite of random schemes and compared with equal-size random subsets.
    """
    _announce(config)
    model, profile = load_context(config)
    if profile is None:
        raise ConfigError("condense needs the toy profile's dev split")
    dev = profile.splits['dev']
    evaluator = evaluator_for(config, profile, 'dev', with_per_sample=True)
    cohorts = cohort_suite(model, config.seed + COHORT_SEED_OFFSET)
    ce = cohort_errors(dev, [m for _, m in cohorts], evaluator, [name for name, _ in cohorts],
                       workers=config.condense.workers)
    correlations = sample_correlations(ce, config.condense.statistic)
    if config.condense.size:
        selected = condense_top(ce, config.condense.size, config.condense.min_length, correlations=correlations)
    else:
        selected = condense_select(ce, config.condense.correl_min, config.condense.min_length,
                                   correlations=correlations)
    manifest = build_manifest(ce, selected, correlations, config.condense.correl_min, config.condense.min_length)
    path = config.paths.manifest
    write_manifest(manifest, path)
    log_action("condense", f"{path} selected={len(selected)}")

    probes = probe_suite(model, config.seed + PROBE_SEED_OFFSET)
    probe_errors = cohort_errors(dev, [m for _, m in probes], evaluator, [name for name, _ in probes])
    condensed_fidelity = subset_fidelity(selected, probe_errors, config.condense.statistic)
    random_fidelity = [subset_fidelity(random_select(dev.sample_ids, len(selected),
                                                     config.seed + RANDOM_SUBSET_SEED_OFFSET + trial),
                                       probe_errors, config.condense.statistic)
                       for trial in range(RANDOM_SUBSET_TRIALS)]
    noisy = int(np.sum(dev.subset(selected).noisy))
    print_table([{
        'Selected': len(selected),
        'Dev samples': len(dev),
        'Reduction': f"{len(dev) / len(selected):.1f}x",
        'Noisy selected': noisy,
        'Fidelity': condensed_fidelity,
        'Random fidelity (mean)': float(np.mean(random_fidelity)),
    }], ['Selected', 'Dev samples', 'Reduction', 'Noisy selected', 'Fidelity', 'Random fidelity (mean)'],
        "Condensed Set")
    print_success(f"Condensed-set manifest written to {path}")
    return manifest


def cmd_select(config):
    """Re-score the top-k searched schemes on the holdout split and keep the best"""
    _announce(config)
    model, profile = load_context(config)
    candidates = top_k(explored_from_log(config.paths.search_log), config.search.top_k)
    holdout = evaluator_for(config, profile, config.select.holdout)
    rows = holdout_report(candidates, holdout, model)
    best_scheme, best_error = select_best(candidates, holdout, model, report=rows)
    selection = {
        'holdout': config.select.holdout,
        'candidates': rows,
        'best': {'scheme': list(best_scheme), 'holdout_error': best_error,
                 'speedup': scheme_speedup(model, best_scheme)},
    }
    _write_json(selection, config.paths.artifact('selection.json'), "select")
    print_table([{'#': r['candidate'], 'Scheme': ' '.join(str(x) for x in r['scheme']),
                  'Proxy error %': r['proxy_error'], 'Holdout error %': r['holdout_error'],
                  'Speedup': r['speedup']} for r in rows],
                ['#', 'Scheme', 'Proxy error %', 'Holdout error %', 'Speedup'], "Candidates")
    print_success(f"Best scheme {list(best_scheme)}: {best_error:.2f}% on {config.select.holdout}")
    return selection


def resolve_scheme(config, model):
    """Scheme to compress with: explicit ranks, a manual energy or the last selection"""
    if config.compress.scheme is not None:
        return Scheme(tuple(config.compress.scheme))
    if config.compress.energy is not None:
        return manual_scheme(model, config.compress.energy)
    path = config.paths.artifact('selection.json')
    if not os.path.exists(path):
        raise ConfigError("compress needs compress.scheme, compress.energy or a selection.json from select")
    with open(path, encoding='utf-8') as f:
        return Scheme(tuple(json.load(f)['best']['scheme']))


def cmd_compress(config):
    """Apply a scheme, optionally retrain, and write compressed.lrfm

    Returns (compressed model, retraining history or None).
    """
    _announce(config)
    model, profile = load_context(config)
    scheme = resolve_scheme(config, model)
    compressed = apply_scheme(model, scheme)
    history = None
    if config.compress.retrain_epochs:
        if profile is None:
            raise ConfigError("retraining needs the toy profile's train split")
        compressed, history = retrain(compressed, profile.splits['train'], config.compress.retrain_epochs,
                                      seed=config.seed + RETRAIN_SEED_OFFSET, monitor=profile.splits['dev'])
    path = config.paths.artifact('compressed.lrfm')
    save_model(compressed, path)
    log_action("compress", f"{path} scheme={list(scheme)}")

    summary = {'Scheme': ' '.join(str(r) for r in scheme), 'Estimated speedup': scheme_speedup(model, scheme),
               'Parameters': compressed.parameter_count}
    if profile is not None:
        dev = profile.splits['dev']
        summary['Measured speedup'] = measure_speedup(model, compressed, dev, config.compress.measure_repeats)
        summary['Dev error %'] = evaluate(compressed, dev).aggregate
    print_table([summary], list(summary), "Compressed Model")
    if history is not None:
        print_table([{'Epoch': e, 'Dev error %': err} for e, err in enumerate(history)],
                    ['Epoch', 'Dev error %'], "Retraining")
    print_success(f"Compressed model written to {path}")
    return compressed, history


def cmd_eval(config):
    """Error of the configured model on eval.split"""
    _announce(config)
    model, profile = load_context(config)
    evaluator = evaluator_for(config, profile, config.eval.split)
    result = evaluator.evaluate(model)
    log_action("eval", f"split={config.eval.split} error={result.aggregate:.4f}")
    print_success(f"Error on {config.eval.split}: {result.aggregate:.2f}% ({format_ms(result.wall_ms)})")
    return result


def cmd_report(config):
    """Per-step report CSV from the search log, plus optional window and manual baseline tables"""
    _announce(config)
    records = read_log(config.paths.search_log)
    windows = [tuple(w) for w in config.report.windows]
    path = config.paths.artifact('report.csv')
    write_report_csv(report_rows(records, windows), path)
    log_action("report", path)
    if windows:
        print_table(window_summary(records, windows), ['window', 'proposals', 'accepted_share', 'best_error'],
                    "Search windows")

    baselines = []
    if config.report.manual_energies:
        model, profile = load_context(config)
        evaluator = evaluator_for(config, profile, 'dev')
        excluded, _ = default_guidance(model, config)
        for energy in config.report.manual_energies:
            for kind, scheme in (('manual', manual_scheme(model, energy)),
                                 ('guided_manual', guided_manual_scheme(model, energy, excluded))):
                try:
                    error = evaluator.evaluate(apply_scheme(model, scheme)).aggregate
                except EvaluatorError as exc:
                    setup_logging().error(f"baseline {kind}@{energy} failed: {exc}")
                    continue
                baselines.append({'kind': kind, 'energy': energy,
                                  'speedup': scheme_speedup(model, scheme), 'error': error})
        baselines_path = config.paths.artifact('baselines.csv')
        _write_baselines(baselines, baselines_path)
        log_action("report", baselines_path)
        print_table(baselines, ['kind', 'energy', 'speedup', 'error'], "Manual baselines")
    print_success(f"Report written to {path}")
    return records, baselines


def _write_baselines(rows, path):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=['kind', 'energy', 'speedup', 'error'])
        writer.writeheader()
        writer.writerows(rows)


def cmd_checkpoint_info(path):
    """Summarize a controller checkpoint"""
    params, metadata = load_checkpoint(path)
    print_table([{'Key': k, 'Value': v} for k, v in sorted(metadata.items())], ['Key', 'Value'],
                f"Controller checkpoint ({params.parameter_count} parameters)")
    print_info(f"Adam step {params.step}")
    return params, metadata


COMMANDS = {
    'profile': cmd_profile,
    'sweep': cmd_sweep,
    'search': cmd_search,
    'condense': cmd_condense,
    'select': cmd_select,
    'compress': cmd_compress,
    'eval': cmd_eval,
    'report': cmd_report,
}


def run_command(config):
    """Dispatch to the cmd_* function for config.mode"""
    return COMMANDS[config.mode](config)
