"""Command-line surface.

Every command prints an effective-config banner (lines starting '#') so a
run can be reproduced from its output, exits 0 on success, and reports
failures as a single machine-parsable "error: ..." line on stderr.
"""

from __future__ import annotations

import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from . import dataset as ds, exact, pdr, pipeline
from .agents import AgentConfig
from .errors import DispatchError
from .instances import Instance, generate_instance_set, parse_taillard, write_taillard
from .model import load_checkpoint
from .pipeline import TrainConfig

INSTANCE_SUFFIX = ".txt"
SOLUTION_SUFFIX = ".sol"


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _banner(command: str, **settings) -> None:
    pairs = " ".join(f"{k}={v}" for k, v in settings.items() if v is not None)
    click.echo(f"# {command} {pairs}")


def _load_instances(directory) -> list[tuple[str, Instance]]:
    paths = sorted(Path(directory).glob(f"*{INSTANCE_SUFFIX}"))
    if not paths:
        raise DispatchError(f"no {INSTANCE_SUFFIX} instance files in {directory}")
    return [(p.stem, parse_taillard(p.read_text())) for p in paths]


def _load_solutions(directory, names) -> dict[str, exact.Schedule]:
    out = {}
    for name in names:
        path = Path(directory) / f"{name}{SOLUTION_SUFFIX}"
        if not path.exists():
            raise DispatchError(f"missing solution file {path}")
        out[name] = exact.parse_solution(path.read_text())
    return out


@click.group()
def main() -> None:
    """Offline RL dispatching for job shop scheduling."""


@main.command("gen-instances")
@click.option("--jobs", type=int, required=True, help="Jobs per instance.")
@click.option("--machines", type=int, required=True, help="Machines per instance.")
@click.option("--count", type=int, default=100, show_default=True,
              help="Number of instances.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Master seed for the generator stream.")
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Output directory for instance files.")
def gen_instances(jobs, machines, count, seed, out_dir) -> None:
    """Generate random instances as Taillard-style text files."""
    _banner("gen-instances", jobs=jobs, machines=machines, count=count,
            seed=seed, out=out_dir)
    try:
        instances = generate_instance_set(jobs, machines, count, seed)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, inst in enumerate(instances):
            (out / f"inst_{i:04d}{INSTANCE_SUFFIX}").write_text(write_taillard(inst))
        click.echo(f"wrote {count} instances to {out}")
    except DispatchError as exc:
        _fail(str(exc))


def _solve_one(args):
    name, inst, rule, node_budget = args
    if rule:
        sched, _ = pdr.pdr_rollout(inst, rule)
    else:
        sched = exact.solve_exact(inst, node_budget)
    return name, sched


@main.command("solve")
@click.option("--instances", "instances_dir", type=click.Path(exists=True),
              required=True, help="Directory of instance files.")
@click.option("--rule", type=click.Choice(["spt", "mor", "mwkr"]), default=None,
              help="Priority dispatching rule to roll out.")
@click.option("--exact", "use_exact", is_flag=True,
              help="Solve with the branch-and-bound oracle.")
@click.option("--node-budget", type=int, default=exact.DEFAULT_NODE_BUDGET,
              show_default=True, help="Search-node budget for --exact.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Directory for solution files.")
@click.option("--refs-out", type=click.Path(), default=None,
              help="Write 'name makespan' reference lines here.")
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker processes for solving instances in parallel.")
def solve(instances_dir, rule, use_exact, node_budget, out_dir, refs_out,
          threads) -> None:
    """Solve every instance with a dispatching rule or the exact oracle."""
    if (rule is None) == (not use_exact):
        _fail("pass exactly one of --rule or --exact")
    _banner("solve", instances=instances_dir, rule=rule, exact=use_exact,
            node_budget=node_budget if use_exact else None, out=out_dir,
            refs_out=refs_out, threads=threads)
    try:
        named = _load_instances(instances_dir)
        if use_exact:
            for name, inst in named:
                if inst.num_ops > exact.ORACLE_SIZE_GUARD:
                    click.echo(
                        f"warning: {name} has {inst.num_ops} operations; the "
                        f"oracle is intended for <= {exact.ORACLE_SIZE_GUARD}",
                        err=True,
                    )
                    break
        tasks = [(name, inst, rule, node_budget) for name, inst in named]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                solved = list(pool.map(_solve_one, tasks))
        else:
            solved = [_solve_one(t) for t in tasks]

        refs = {}
        for (name, inst), (_, sched) in zip(named, solved):
            refs[name] = sched.makespan
            flag = ""
            if use_exact and not sched.optimal:
                flag = "  (node budget hit, not proven optimal)"
            click.echo(f"{name} {sched.makespan}{flag}")
            if out_dir:
                out = Path(out_dir)
                out.mkdir(parents=True, exist_ok=True)
                (out / f"{name}{SOLUTION_SUFFIX}").write_text(
                    exact.write_solution(inst, sched)
                )
        if refs_out:
            Path(refs_out).write_text(exact.write_refs(refs))
        mean = sum(refs.values()) / len(refs)
        click.echo(f"mean makespan {mean:.1f} over {len(refs)} instances")
    except DispatchError as exc:
        _fail(str(exc))


@main.command("import-solutions")
@click.option("--instances", "instances_dir", type=click.Path(exists=True),
              required=True, help="Directory of instance files.")
@click.option("--solutions", "solutions_dir", type=click.Path(exists=True),
              required=True, help="Directory of external solution files.")
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Directory for validated, canonicalized solutions.")
def import_solutions(instances_dir, solutions_dir, out_dir) -> None:
    """Validate external schedules against their instances and canonicalize."""
    _banner("import-solutions", instances=instances_dir, solutions=solutions_dir,
            out=out_dir)
    try:
        named = _load_instances(instances_dir)
        solutions = _load_solutions(solutions_dir, [n for n, _ in named])
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, inst in named:
            sched = solutions[name]
            violation = exact.validate_schedule(inst, sched)
            if violation is not None:
                raise DispatchError(f"{name}: infeasible solution: {violation}")
            (out / f"{name}{SOLUTION_SUFFIX}").write_text(
                exact.write_solution(inst, sched)
            )
        click.echo(f"imported {len(named)} solutions to {out}")
    except DispatchError as exc:
        _fail(str(exc))


@main.command("make-dataset")
@click.option("--instances", "instances_dir", type=click.Path(exists=True),
              required=True, help="Directory of instance files.")
@click.option("--solutions", "solutions_dir", type=click.Path(exists=True),
              required=True, help="Directory of expert solution files.")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Dataset file to write.")
@click.option("--noisy", is_flag=True, help="Inject epsilon-greedy noise.")
@click.option("--p-noisy", type=float, default=0.5, show_default=True,
              help="Probability an episode is noisy.")
@click.option("--epsilon", type=float, default=0.1, show_default=True,
              help="Per-step random-action probability inside noisy episodes.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for the noise stream.")
def make_dataset(instances_dir, solutions_dir, out_path, noisy, p_noisy,
                 epsilon, seed) -> None:
    """Build an offline dataset from expert schedules."""
    _banner("make-dataset", instances=instances_dir, solutions=solutions_dir,
            out=out_path, noisy=noisy, p_noisy=p_noisy if noisy else None,
            epsilon=epsilon if noisy else None, seed=seed if noisy else None)
    try:
        named = _load_instances(instances_dir)
        solutions = _load_solutions(solutions_dir, [n for n, _ in named])
        pairs = [(inst, solutions[name]) for name, inst in named]
        records = ds.make_expert_dataset(pairs)
        if noisy:
            records = ds.make_noisy_dataset(records, p_noisy, epsilon, seed)
            text = ds.write_dataset(records, p_noisy, epsilon, seed)
        else:
            text = ds.write_dataset(records)
        Path(out_path).write_text(text)
        n_noisy = sum(r.noisy for r in records)
        click.echo(
            f"wrote {len(records)} episodes ({n_noisy} noisy) to {out_path}"
        )
    except DispatchError as exc:
        _fail(str(exc))


def _read_config_file(path) -> dict:
    """key = value lines; '#' comments allowed."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DispatchError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


_TRAIN_DEFAULTS = {
    "steps": 50_000, "lr": 2e-5, "batch_size": 64, "seed": 600,
    "reward_mode": "normalized", "alpha_cql": 1.0, "gamma": 1.0,
    "n_quantiles": 32, "kappa": 1.0, "c_entropy": 0.98,
    "target_update_every": 2500, "dropout": 0.4, "feature_scale": 1000.0,
    "eval_every": 2500,
}


def _merge_train_settings(flags: dict, file_values: dict) -> dict:
    settings = {}
    for key, default in _TRAIN_DEFAULTS.items():
        if flags.get(key) is not None:
            settings[key] = flags[key]
        elif key in file_values:
            caster = type(default)
            raw = file_values[key]
            settings[key] = caster(raw) if caster is not str else raw
        else:
            settings[key] = default
    unknown = set(file_values) - set(_TRAIN_DEFAULTS)
    if unknown:
        raise DispatchError(f"unknown config keys: {sorted(unknown)}")
    return settings


@main.command("train")
@click.option("--method", type=click.Choice(["mqrdqn", "dmsac", "bc"]),
              required=True, help="Training method.")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True),
              required=True, help="Dataset file from make-dataset.")
@click.option("--out", "checkpoint_path", type=click.Path(), required=True,
              help="Checkpoint file to write.")
@click.option("--log", "log_path", type=click.Path(), required=True,
              help="Training log CSV to write.")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="key = value config file (flags win).")
@click.option("--steps", type=int, default=None, help="Training steps.")
@click.option("--lr", type=float, default=None, help="Learning rate.")
@click.option("--batch-size", type=int, default=None, help="Batch size.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--reward-mode", type=click.Choice(list(ds.REWARD_MODES)),
              default=None, help="Reward preprocessing mode.")
@click.option("--alpha-cql", type=float, default=None,
              help="Conservative regularizer weight.")
@click.option("--eval-instances", type=click.Path(exists=True), default=None,
              help="Held-out instance directory for periodic evaluation.")
@click.option("--eval-refs", type=click.Path(exists=True), default=None,
              help="Reference makespans for the evaluation set.")
@click.option("--eval-every", type=int, default=None,
              help="Evaluation cadence in steps.")
@click.option("--plot", "plot_path", type=click.Path(), default=None,
              help="Also render training curves to this PNG.")
def train(method, dataset_path, checkpoint_path, log_path, config_path,
          eval_instances, eval_refs, plot_path, **flags) -> None:
    """Train an offline agent on a dataset."""
    try:
        file_values = _read_config_file(config_path) if config_path else {}
        s = _merge_train_settings(flags, file_values)
        _banner("train", method=method, dataset=dataset_path, out=checkpoint_path,
                log=log_path, **s,
                eval_instances=eval_instances, eval_refs=eval_refs)
        if (eval_instances is None) != (eval_refs is None):
            raise DispatchError("--eval-instances and --eval-refs go together")

        records, _manifest = ds.read_dataset(Path(dataset_path).read_text())
        config = TrainConfig(
            method=method,
            steps=s["steps"],
            lr=s["lr"],
            batch_size=s["batch_size"],
            seed=s["seed"],
            dropout=s["dropout"],
            feature_scale=s["feature_scale"],
            eval_every=s["eval_every"],
            agent=AgentConfig(
                alpha_cql=s["alpha_cql"],
                gamma=s["gamma"],
                n_quantiles=s["n_quantiles"],
                kappa=s["kappa"],
                c_entropy=s["c_entropy"],
                target_update_every=s["target_update_every"],
                reward_mode=s["reward_mode"],
            ),
        )
        eval_set = eval_ref_list = None
        if eval_instances:
            named = _load_instances(eval_instances)
            refs = exact.parse_refs(Path(eval_refs).read_text())
            missing = [n for n, _ in named if n not in refs]
            if missing:
                raise DispatchError(f"no reference makespan for {missing[:3]}...")
            eval_set = [inst for _, inst in named]
            eval_ref_list = [refs[name] for name, _ in named]

        def progress(step, row):
            gap = row.get("eval_gap")
            suffix = f"  eval_gap={gap:.2f}%" if gap is not None else ""
            click.echo(f"step {step}/{config.steps}  "
                       f"loss={row['loss_total']:.5f}{suffix}")

        _params, rows = pipeline.train_offline(
            records, config,
            eval_instances=eval_set, eval_refs=eval_ref_list,
            log_path=log_path, checkpoint_path=checkpoint_path,
            progress=progress,
        )
        if plot_path:
            from .plots import save_training_curves

            save_training_curves(rows, plot_path)
        click.echo(f"checkpoint {checkpoint_path}  log {log_path}")
    except DispatchError as exc:
        _fail(str(exc))


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), default=None,
              help="Trained checkpoint to evaluate.")
@click.option("--rule", type=click.Choice(["spt", "mor", "mwkr"]), default=None,
              help="Evaluate a dispatching rule instead of a checkpoint.")
@click.option("--instances", "instances_dir", type=click.Path(exists=True),
              required=True, help="Directory of instance files.")
@click.option("--refs", "refs_path", type=click.Path(exists=True), required=True,
              help="Reference makespans ('name makespan' lines).")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Per-instance report CSV to write.")
def eval_command(checkpoint, rule, instances_dir, refs_path, out_path) -> None:
    """Greedy evaluation of a checkpoint or rule against reference makespans."""
    if (checkpoint is None) == (rule is None):
        _fail("pass exactly one of --checkpoint or --rule")
    _banner("eval", checkpoint=checkpoint, rule=rule, instances=instances_dir,
            refs=refs_path, out=out_path)
    try:
        named = _load_instances(instances_dir)
        refs = exact.parse_refs(Path(refs_path).read_text())
        params = load_checkpoint(checkpoint) if checkpoint else None
        report = pipeline.evaluate(
            named, refs, params=params, rule=rule,
            warn=lambda m: click.echo(m, err=True),
        )
        Path(out_path).write_text(report.to_csv())
        click.echo(
            f"{report.method}: gap {report.mean_gap:.2f}% +- {report.std_gap:.2f}% "
            f"on {len(report.rows)} instances ({report.skipped} skipped)"
        )
    except DispatchError as exc:
        _fail(str(exc))


@main.command("report")
@click.argument("eval_csvs", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Directory for table.txt, comparison.csv, and gaps.png.")
def report(eval_csvs, out_dir) -> None:
    """Combine eval CSVs into a comparison table, CSV, and figure.

    Each input file's stem is used as its method label.
    """
    _banner("report", inputs=",".join(eval_csvs), out=out_dir)
    try:
        reports = [_read_eval_csv(path) for path in eval_csvs]
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = pipeline.report_table(reports)
        (out / "table.txt").write_text(table)
        (out / "comparison.csv").write_text(pipeline.report_csv(reports))
        from .plots import save_gap_chart

        save_gap_chart(reports, out / "gaps.png")
        click.echo(table, nl=False)
        click.echo(f"wrote {out / 'table.txt'}, {out / 'comparison.csv'}, "
                   f"{out / 'gaps.png'}")
    except DispatchError as exc:
        _fail(str(exc))


def _read_eval_csv(path) -> pipeline.EvalReport:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "instance,C,C_star,gap_pct,millis":
        raise DispatchError(f"{path}: not an eval report CSV")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 5:
            raise DispatchError(f"{path}:{lineno}: expected 5 fields")
        rows.append(pipeline.EvalRow(
            instance=parts[0], makespan=int(parts[1]), reference=int(parts[2]),
            gap_pct=float(parts[3]), millis=float(parts[4]),
        ))
    return pipeline.EvalReport(method=Path(path).stem, rows=rows)


if __name__ == "__main__":
    main()
