import argparse
import logging
import os
import sys
import textwrap
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .config import load_config, save_config_template
from .errors import ConfigInvalid, MalformedRunFile, RicciLabError, TrajectoryTruncated
from .export import plot_run, read_run_csv, write_manifest, write_report, write_table
from .flow import Constant, FlowState, integrate
from .functionals import monitor_frame
from .harness import RUNTIME_ERRORS, run_suite


EXTENDED_HELP = textwrap.dedent("""\
    ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
      ricci_lab - Detailed Help
    ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

    DESCRIPTION
      Integrates Ricci flow and rescaled Ricci flow on conformally flat
      2-tori and round spheres, tracks the lowest eigenvalue of
      -4 Delta + k R along the flow, and checks the monotonicity and
      first-variation identities numerically.

    BASIC USAGE
      python -m ricci_lab template -o my_run.yaml
      python -m ricci_lab run --config my_run.yaml
      python -m ricci_lab plot --input ricci_lab_output/run.csv -o run.svg
      python -m ricci_lab verify
      python -m ricci_lab sweep --config my_run.yaml

    SUBCOMMANDS
      run                 Integrate one flow and write the per-state CSV.
      verify              Run the check suite and write a JSON report.
      plot                Plot a run CSV to SVG.
      sweep               One run per (k, s) pair from the sweep section.
      template            Write an annotated config file.

    ─── RUN ────────────────────────────────────────────────────────
      Options:
        --config, -c FILE   YAML or JSON config (required).
        --output-dir DIR    Output directory (default: run.output_dir,
                            or $RICCI_LAB_OUTPUT when set).
        --plot              Also write run.svg next to the CSV.

      Writes run.csv (one row per state, 17 significant digits) and
      manifest.json (resolved config, versions, trajectory summary).
      A flow that blows up writes the partial CSV and exits with 3.

    ─── VERIFY ─────────────────────────────────────────────────────
      Options:
        --config, -c FILE   Config (default: the bundled default.yaml).
        --output, -o FILE   Report path (default: <output_dir>/report.json).
        --workers N         Threads for independent checks.

      checks.enabled selects check groups:
        operator_convergence  gauss_bonnet       solver_oracle
        scale_invariance      form_agreement     first_variation
        sphere_eigenvalue_law dlambda_identity   monotone
        normalized_flow       coupled_monotone   rescale_closed_forms
        round_trip            correspondence     integrator_order

      A check whose hypothesis fails (e.g. s > 0 for the rescaled
      monotonicity) is reported as skipped with the measured value.

    ─── PLOT ───────────────────────────────────────────────────────
      Options:
        --input, -i FILE    Run CSV written by 'run'.
        --output, -o FILE   SVG path (default: run.svg).

      One pane per monitored series, one line per k.

    ─── SWEEP ──────────────────────────────────────────────────────
      Runs the configured initial metric for every k in sweep.ks and
      every s in sweep.s_values (s = 0 is Ricci flow, otherwise the
      rescaled flow with constant s) and writes each pair to its own
      directory <output_dir>/k<K>_s<S>/.

    ─── CONFIG ─────────────────────────────────────────────────────
      Sections: metric, flow, spectral, run, checks, sweep.
      Every key is optional. dt: auto uses half the CFL bound.
      Run 'python -m ricci_lab template' for the annotated defaults.

    ─── EXIT CODES ─────────────────────────────────────────────────
      0  success
      1  a check failed
      2  invalid config, missing or malformed input file
      3  stability violation, blow-up, solver failure

    ─── PYTHON LIBRARY USAGE ───────────────────────────────────────
      from ricci_lab import ConformalTorus, FlowState, integrate
      from ricci_lab import Constant, lowest_eigenpair, monitor

      g0 = ConformalTorus.sinusoid(32, 32, 3.0, 3.0, amplitude=0.1)
      traj = integrate(FlowState(0.0, g0), T=0.04, dt=1e-4,
                       flow_kind="rescaled", provider=Constant(-1.0))
      for series in monitor(traj, k=1.0):
          print(series.name, series.values[0], series.values[-1])

    ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
""")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_RUNTIME = 3


def _exit_code(exc):
    if isinstance(exc, (ConfigInvalid, MalformedRunFile, OSError)):
        return EXIT_INPUT
    return EXIT_RUNTIME


def _load(args):
    config = load_config(getattr(args, "config", None))
    print(f"Loaded config {config.source} (dt={config.flow.dt:.6g}, T={config.flow.T:g})")
    return config


def _output_dir(args, config):
    out = getattr(args, "output_dir", None) or config.run.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _run_one(config, out_dir, ks, provider, flow_kind, metric):
    """Integrate, monitor and write one run; returns the error that truncated it, if any."""
    truncated = None
    try:
        trajectory = integrate(FlowState(0.0, metric), config.flow.T, config.flow.dt,
                               flow_kind, provider, progress=config.run.progress)
    except TrajectoryTruncated as exc:
        trajectory, truncated = exc.trajectory, exc

    frame = monitor_frame(trajectory, ks, tau0=config.flow.tau0, tol=config.spectral.tol,
                          workers=config.run.workers, coupled=config.run.coupled)
    csv_path = write_table(frame, os.path.join(out_dir, "run.csv"))
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest_path, config, trajectory, outputs=[csv_path])
    return frame, csv_path, manifest_path, truncated


def _cmd_run(args):
    """Run the run subcommand."""
    config = _load(args)
    out_dir = _output_dir(args, config)
    metric = config.initial_metric()
    frame, csv_path, manifest_path, truncated = _run_one(
        config, out_dir, config.spectral.ks, config.provider(metric), config.flow.kind, metric)
    print(f"Wrote {len(frame)} states -> {csv_path}")
    print(f"Wrote manifest -> {manifest_path}")
    if args.plot:
        svg = plot_run(frame, os.path.join(out_dir, "run.svg"))
        print(f"Wrote plot -> {svg}")
    if truncated is not None:
        raise truncated
    return EXIT_OK


def _cmd_verify(args):
    """Run the verify subcommand."""
    config = _load(args)
    if args.workers is not None:
        config = replace(config, run=replace(config.run, workers=args.workers))
    report = run_suite(config)
    path = args.output or os.path.join(_output_dir(args, config), "report.json")
    write_report(report, path)

    skipped = sum(c.skipped for c in report.checks)
    failures = report.failures()
    for c in failures:
        print(f"FAIL {c.name}: {c.details}")
    print(f"{len(report.checks)} checks, {len(failures)} failed, {skipped} skipped")
    print(f"Wrote report -> {path}")
    if report.passed:
        return EXIT_OK
    if any(c.extra.get("error") in RUNTIME_ERRORS for c in failures):
        return EXIT_RUNTIME
    return EXIT_CHECK_FAILED


def _cmd_plot(args):
    """Run the plot subcommand."""
    df = read_run_csv(args.input)
    print(f"Loaded {len(df)} states from {args.input}")
    plot_run(df, args.output, title=os.path.basename(args.input))
    print(f"Wrote plot -> {args.output}")
    return EXIT_OK


def _cmd_sweep(args):
    """Run the sweep subcommand."""
    config = _load(args)
    root = _output_dir(args, config)
    metric = config.initial_metric()
    pairs = [(k, s) for k in config.sweep.ks for s in config.sweep.s_values]

    def one(pair):
        k, s = pair
        out_dir = os.path.join(root, f"k{k:g}_s{s:g}")
        os.makedirs(out_dir, exist_ok=True)
        kind, provider = ("ricci", None) if s == 0 else ("rescaled", Constant(s))
        try:
            frame, csv_path, _, truncated = _run_one(config, out_dir, [k], provider, kind, metric)
        except RicciLabError as exc:
            return pair, None, exc
        return pair, csv_path, truncated

    with ThreadPoolExecutor(max_workers=config.run.workers) as executor:
        outcomes = list(executor.map(one, pairs))

    code = EXIT_OK
    for (k, s), csv_path, error in outcomes:
        if csv_path is not None:
            print(f"Wrote k={k:g} s={s:g} -> {csv_path}")
        if error is not None:
            print(f"k={k:g} s={s:g}: {type(error).__name__}: {error}", file=sys.stderr)
            code = max(code, _exit_code(error))
    return code


def _cmd_template(args):
    """Run the template subcommand."""
    path = save_config_template(args.output)
    print(f"Config template saved to: {path}")
    return EXIT_OK


def main(argv=None) -> int:
    """Entry point for the command line interface."""

    parser = argparse.ArgumentParser(
        prog='ricci_lab',
        description='Ricci flow, rescaled Ricci flow and eigenvalue monotonicity checks.',
        epilog=(
            "Run 'python -m ricci_lab --help-all' for detailed documentation "
            "including the config format, check groups and exit codes."
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )

    parser.add_argument(
        '--help-all',
        action='store_true',
        default=False,
        help='Show the extended help page with config format, checks, and examples.',
    )
    parser.add_argument(
        '--verbose', '-v',
        action='store_true',
        help='Log solver progress (DEBUG level).',
    )

    subparsers = parser.add_subparsers(dest='command')

    # ── run ────────────────────────────────────────────────────
    run_parser = subparsers.add_parser(
        'run',
        help='Integrate one flow and write the per-state CSV and manifest.',
    )
    run_parser.add_argument('--config', '-c', required=True, help='YAML/JSON config file.')
    run_parser.add_argument(
        '--output-dir',
        help='Output directory (default: run.output_dir or $RICCI_LAB_OUTPUT).',
    )
    run_parser.add_argument(
        '--plot',
        action='store_true',
        default=False,
        help='Also write run.svg.',
    )

    # ── verify ─────────────────────────────────────────────────
    verify_parser = subparsers.add_parser(
        'verify',
        help='Run the check suite and write a JSON report.',
    )
    verify_parser.add_argument(
        '--config', '-c',
        default=None,
        help='YAML/JSON config file (default: bundled default.yaml).',
    )
    verify_parser.add_argument(
        '--output', '-o',
        default=None,
        help='Report path (default: <output_dir>/report.json).',
    )
    verify_parser.add_argument('--output-dir', help='Output directory override.')
    verify_parser.add_argument(
        '--workers',
        type=int,
        default=None,
        help='Threads for independent checks (default: run.workers).',
    )

    # ── plot ───────────────────────────────────────────────────
    plot_parser = subparsers.add_parser(
        'plot',
        help='Plot a run CSV to SVG.',
    )
    plot_parser.add_argument('--input', '-i', required=True, help='Run CSV file.')
    plot_parser.add_argument(
        '--output', '-o',
        default='run.svg',
        help='Output SVG file (default: run.svg).',
    )

    # ── sweep ──────────────────────────────────────────────────
    sweep_parser = subparsers.add_parser(
        'sweep',
        help='One run per (k, s) pair, each in its own directory.',
    )
    sweep_parser.add_argument('--config', '-c', required=True, help='YAML/JSON config file.')
    sweep_parser.add_argument('--output-dir', help='Root output directory override.')

    # ── template ───────────────────────────────────────────────
    template_parser = subparsers.add_parser(
        'template',
        help='Write an annotated config file.',
    )
    template_parser.add_argument(
        '--output', '-o',
        default='ricci_lab_config.yaml',
        help='Output file path; .json writes plain JSON (default: ricci_lab_config.yaml).',
    )

    args = parser.parse_args(argv)

    level = logging.DEBUG if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    # --help-all prints the extended manual
    if args.help_all:
        print(EXTENDED_HELP)
        return EXIT_OK

    if args.command is None:
        parser.print_help()
        return EXIT_OK

    dispatch = {
        'run': _cmd_run,
        'verify': _cmd_verify,
        'plot': _cmd_plot,
        'sweep': _cmd_sweep,
        'template': _cmd_template,
    }
    try:
        return dispatch[args.command](args)
    except (RicciLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
