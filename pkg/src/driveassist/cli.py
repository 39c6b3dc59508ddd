"""Command-line entry points: serve the live system, replay scenarios, report metrics."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from driveassist.backend import BackendConfig, BackendKind
from driveassist.gateway import BindError, GatewayConfig, GatewayRuntime, serve
from driveassist.metrics import MalformedCsv, parse_csv
from driveassist.pipeline import build_pipeline
from driveassist.replay import ScenarioError, load_scenario, run_replay
from driveassist.simulator import WorldScene, scene_from_strings

_SERVICE_ORDER = ("ConversationalOnly", "ConversationalAdas", "SceneAware")


def _parse_scene_flag(value: str) -> WorldScene:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 3:
        raise click.UsageError(f"--scene must be road,weather,traffic (got {value!r})")
    try:
        return scene_from_strings(*parts)
    except ValueError as exc:
        raise click.UsageError(f"invalid scene {value!r}: {exc}") from exc


@click.group()
def main() -> None:
    """Scene-aware conversational driver assistance on a simulated vehicle."""


@main.command("serve")
@click.option("--port", type=int, default=8777, envvar="DRIVEASSIST_PORT", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--scene", "scene_flag", default="downtown,clear,moderate", show_default=True,
              help="Initial world scene as road,weather,traffic.")
@click.option("--backend", "backend_kind", type=click.Choice(["rule", "remote"]), default="rule",
              show_default=True)
@click.option("--endpoint-url", default=None, help="Completion endpoint (remote backend).")
@click.option("--api-key-env", default=None,
              help="Environment variable holding the remote API key.")
@click.option("--variability/--no-variability", default=False,
              help="Paraphrase scene descriptions instead of canonical templates.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--initial-speed", type=float, default=42.0, show_default=True)
@click.option("--telemetry-hz", type=float, default=5.0, show_default=True)
@click.option("--max-sessions", type=int, default=4, show_default=True)
@click.option("--static-dir", type=click.Path(path_type=Path), default=None,
              help="Cockpit asset directory served at '/'. Defaults to ./frontend/dist when present.")
@click.option("--metrics-out", type=click.Path(path_type=Path), default=None,
              help="Write the metrics CSV here on shutdown.")
def cmd_serve(port: int, host: str, scene_flag: str, backend_kind: str,
              endpoint_url: str | None, api_key_env: str | None, variability: bool,
              seed: int, initial_speed: float, telemetry_hz: float, max_sessions: int,
              static_dir: Path | None, metrics_out: Path | None) -> None:
    """Run the gateway, simulator, and agent until interrupted."""
    scene = _parse_scene_flag(scene_flag)
    if backend_kind == "remote" and not endpoint_url:
        raise click.UsageError("--backend remote requires --endpoint-url")
    if telemetry_hz <= 0:
        raise click.UsageError("--telemetry-hz must be > 0")
    backend_config = BackendConfig(
        kind=BackendKind.REMOTE if backend_kind == "remote" else BackendKind.RULE_ORACLE,
        endpoint_url=endpoint_url,
        api_key_env=api_key_env,
    )
    pipeline, simulator = build_pipeline(
        scene, initial_speed, backend_config, variability=variability, seed=seed
    )
    if static_dir is None:
        default_static = Path("frontend") / "dist"
        static_dir = default_static if default_static.is_dir() else None
    config = GatewayConfig(
        port=port,
        host=host,
        telemetry_hz=telemetry_hz,
        max_sessions=max_sessions,
        static_dir=static_dir,
        metrics_out=metrics_out,
    )
    runtime = GatewayRuntime(pipeline, simulator, config)
    click.echo(f"serving on ws://{host}:{port}/session (scene: {scene_flag})")
    try:
        serve(runtime)
    except BindError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@main.command("replay")
@click.argument("scenario")
@click.option("--metrics-out", type=click.Path(path_type=Path), default=None,
              help="Write the replay metrics CSV here.")
def cmd_replay(scenario: str, metrics_out: Path | None) -> None:
    """Replay a scenario file (or bundled name) headlessly and check expectations."""
    try:
        loaded = load_scenario(scenario)
        result = run_replay(loaded)
    except ScenarioError as exc:
        raise click.UsageError(str(exc)) from exc
    for report in result.turn_reports:
        click.echo(f"[{report.index}] {report.result.service_type.value}")
        click.echo(f"    driver: {report.query_text}")
        click.echo(f"    assistant: {report.result.response.text}")
    if metrics_out is not None:
        metrics_out.write_bytes(result.metrics_csv())
        click.echo(f"metrics written to {metrics_out}")
    if result.failures:
        click.echo("")
        for failure in result.failures:
            click.echo(f"FAIL: {failure}", err=True)
        sys.exit(1)
    click.echo(f"ok ({len(result.turn_reports)} turns)")


@main.command("report")
@click.argument("metrics_csv", type=click.Path(path_type=Path, exists=True, dir_okay=False))
def cmd_report(metrics_csv: Path) -> None:
    """Summarize a metrics CSV: per-service latency and token growth."""
    try:
        rows = parse_csv(metrics_csv.read_bytes())
    except MalformedCsv as exc:
        click.echo(f"error: malformed metrics CSV: {exc}", err=True)
        sys.exit(2)
    if not rows:
        click.echo("no records")
        return

    services = [s for s in _SERVICE_ORDER if any(r["service_type"] == s for r in rows)]
    services += sorted({r["service_type"] for r in rows} - set(_SERVICE_ORDER))
    click.echo("service latency (ms)")
    click.echo(f"  {'service':<22}{'count':>6}{'mean':>12}{'min':>12}{'max':>12}")
    for service in services:
        totals = [r["total_ms"] for r in rows if r["service_type"] == service]
        mean = sum(totals) / len(totals)
        click.echo(
            f"  {service:<22}{len(totals):>6}{mean:>12.3f}{min(totals):>12.3f}{max(totals):>12.3f}"
        )
    click.echo("")
    click.echo("token series (per turn)")
    click.echo(f"  {'seq':>4}  {'service':<22}{'uplink':>8}{'downlink':>10}")
    for row in sorted(rows, key=lambda r: r["sequence_index"]):
        click.echo(
            f"  {row['sequence_index']:>4}  {row['service_type']:<22}"
            f"{row['uplink_tokens']:>8}{row['downlink_tokens']:>10}"
        )


if __name__ == "__main__":
    main()
