"""Command-line interface.

The CLI is a thin client of the HTTP service: every subcommand builds a
request, sends it to the service, and formats the response.  By default
requests run against an in-process app instance; point `--server` (or
PERISHFAIR_SERVER) at a running `perishfair serve` to go over the
network.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import click
import httpx

from . import __version__

_SERVER_ENV = "PERISHFAIR_SERVER"


def _client(server: str | None) -> httpx.Client:
    base = server or os.environ.get(_SERVER_ENV)
    if base:
        return httpx.Client(base_url=base, timeout=600.0)
    # in-process fallback: same request/response path, no socket
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _post(server: str | None, endpoint: str, payload: dict) -> dict:
    with _client(server) as client:
        resp = client.post(endpoint, json=payload)
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", resp.text)
            except Exception:
                detail = resp.text
            raise click.ClickException(f"{endpoint} failed ({resp.status_code}): {detail}")
        return resp.json()


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def _instance_payload(instance: str | None, paper: str | None, params: tuple) -> dict:
    if (instance is None) == (paper is None):
        raise click.UsageError("provide exactly one of --instance or --paper")
    if instance is not None:
        path = Path(instance)
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text())
        else:
            try:
                import tomllib
            except ModuleNotFoundError:  # py310
                import tomli as tomllib
            data = tomllib.loads(path.read_text())
        return {"instance": data}
    kv = {}
    for item in params:
        if "=" not in item:
            raise click.UsageError(f"-P expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        kv[key] = _coerce(value)
    return {"paper": {"name": paper, "params": kv}}


server_option = click.option("--server", default=None, help="Service URL (default: in-process).")
instance_option = click.option("--instance", default=None, type=click.Path(exists=True, dir_okay=False),
                               help="Instance definition file (TOML or JSON).")
paper_option = click.option("--paper", default=None, help="Named benchmark instance.")
param_option = click.option("-P", "--param", "params", multiple=True,
                            help="Named-instance parameter, key=value (repeatable).")


@click.group()
@click.version_option(__version__)
def main():
    """Perishable-resource fair allocation: planner, simulator, experiments."""


@main.command()
@instance_option
@paper_option
@param_option
@click.option("--epsilon", type=float, default=None, help="Line-search grid step.")
@click.option("--grid", is_flag=True, help="Also print the (x, delta_bar, rhs) CSV grid.")
@click.option("--grid-out", type=click.Path(dir_okay=False), default=None, help="Write the grid CSV here.")
@server_option
def xlower(instance, paper, params, epsilon, grid, grid_out, server):
    """Baseline allocation, perishing-induced loss, and worst-case spoilage."""
    payload = _instance_payload(instance, paper, params)
    payload.update({"grid": grid or grid_out is not None, "epsilon": epsilon})
    data = _post(server, "/xlower", payload)
    grid_csv = data.pop("grid_csv", None)
    click.echo(json.dumps(data, indent=2))
    if grid_csv:
        if grid_out:
            Path(grid_out).write_text(grid_csv)
            click.echo(f"grid written to {grid_out}", err=True)
        else:
            click.echo(grid_csv, nl=False)


@main.command()
@instance_option
@paper_option
@param_option
@click.option("--policy", default="perishing-guardrail", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--lt", type=float, default=None, help="Envy budget override.")
@click.option("--trace-out", type=click.Path(dir_okay=False), default=None,
              help="Write the per-round trace CSV here.")
@server_option
def simulate(instance, paper, params, policy, seed, lt, trace_out, server):
    """Run one policy over one sample path and report its metrics."""
    payload = _instance_payload(instance, paper, params)
    payload.update({"policy": policy, "seed": seed, "lt": lt})
    data = _post(server, "/simulate", payload)
    trace = data.pop("trace_csv", "")
    click.echo(json.dumps(data, indent=2))
    if trace_out:
        Path(trace_out).write_text(trace)
        click.echo(f"trace written to {trace_out}", err=True)


@main.command("check-oe")
@instance_option
@paper_option
@param_option
@click.option("--reps", type=int, default=150, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@server_option
def check_oe(instance, paper, params, reps, seed, server):
    """Estimate the probability that a sample path is offset-expiring."""
    payload = _instance_payload(instance, paper, params)
    payload.update({"reps": reps, "seed": seed})
    data = _post(server, "/check-oe", payload)
    click.echo(json.dumps(data, indent=2))


@main.command()
@instance_option
@paper_option
@param_option
@click.option("--policies", default=",".join(("static-proportional", "static-xlower",
                                              "vanilla-guardrail", "perishing-guardrail")),
              show_default=True, help="Comma-separated policy list.")
@click.option("--reps", type=int, default=150, show_default=True)
@click.option("--seed", type=int, default=20240501, show_default=True)
@click.option("--lt", type=float, default=None, help="Envy budget override.")
@click.option("--workers", type=int, default=None, help="Thread count (or PERISHFAIR_THREADS).")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the per-replication CSV here.")
@server_option
def run(instance, paper, params, policies, reps, seed, lt, workers, out, server):
    """Replicate all policies on common random paths and print summary stats."""
    payload = _instance_payload(instance, paper, params)
    payload.update({
        "policies": [p.strip() for p in policies.split(",") if p.strip()],
        "replications": reps,
        "base_seed": seed,
        "lt": lt,
        "workers": workers,
    })
    data = _post(server, "/run", payload)
    csv_text = data.pop("replications_csv", "")
    click.echo(json.dumps(data, indent=2))
    if out:
        Path(out).write_text(csv_text)
        click.echo(f"replications written to {out}", err=True)


@main.command()
@instance_option
@paper_option
@param_option
@click.option("--betas", default="0:1:0.05", show_default=True,
              help="Comma list or start:stop:step; 'inf' adds the L_T = 0 sentinel.")
@click.option("--policies", default="perishing-guardrail,vanilla-guardrail", show_default=True)
@click.option("--reps", type=int, default=150, show_default=True)
@click.option("--seed", type=int, default=20240501, show_default=True)
@click.option("--workers", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the sweep CSV here.")
@server_option
def sweep(instance, paper, params, betas, policies, reps, seed, workers, out, server):
    """Envy-efficiency trade-off sweep over the L_T = T^(-beta) grid."""
    import math

    payload = _instance_payload(instance, paper, params)
    parsed = _parse_betas(betas)
    payload.update({
        # strings survive strict JSON; the service coerces them back
        "betas": ["inf" if math.isinf(b) else b for b in parsed],
        "policies": [p.strip() for p in policies.split(",") if p.strip()],
        "replications": reps,
        "base_seed": seed,
        "workers": workers,
    })
    data = _post(server, "/sweep", payload)
    csv_text = data.pop("csv", "")
    if out:
        Path(out).write_text(csv_text)
        click.echo(f"sweep written to {out}", err=True)
        click.echo(json.dumps({"rows": len(data.get("rows", []))}))
    else:
        click.echo(csv_text, nl=False)


def _parse_betas(spec: str) -> list:
    spec = spec.strip()
    if ":" in spec:
        start, stop, step = (float(x) for x in spec.split(":"))
        out, value, i = [], start, 0
        while value <= stop + 1e-9:
            out.append(round(value, 10))
            i += 1
            value = start + i * step
        return out
    return [float("inf") if x.strip() == "inf" else float(x) for x in spec.split(",") if x.strip()]


@main.command()
@click.option("--csv", "csv_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Retail series CSV: day,begin_stock,restock,sales,end_stock.")
@server_option
def calibrate(csv_path, server):
    """Fit the daily perishing rate and demand distribution from a stock ledger."""
    data = _post(server, "/calibrate", {"csv_text": Path(csv_path).read_text()})
    click.echo(json.dumps(data, indent=2))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
