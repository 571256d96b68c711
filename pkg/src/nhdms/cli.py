"""Command line entry point and pipeline orchestration.

``nhdms solve CONFIG [--pipeline NAME] [--threads N] [--check] [--out DIR]``

Every run writes ``manifest.json`` into the output directory. The manifest
lists every file the run produced, the config hash, mesh hashes, cache
counters and results; wall times live under the separate ``timings`` key so
two runs of the same config produce identical manifests once that key is
dropped.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, _backend, config, io, linsolve
from .analysis import (ErrorReport, alpha_study, cost_report, edge_field, extension_convergence_study,
                       face_field, write_csv)
from .homog import HomogenizedTensors, homogenize
from .macro import solve_extended, solve_original
from .mesh import mesh_array
from .model import build_coefficient_field
from .multiscale import modified_multiscale, multiscale_errors, original_multiscale

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


class StageError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


def _split_stats(stats: dict) -> tuple[dict, dict]:
    """Separate wall times from deterministic bookkeeping."""
    timed = {k: v for k, v in stats.items() if k.endswith("time")}
    rest = {k: v for k, v in stats.items() if not k.endswith("time") and k != "residual"}
    return rest, timed


class Run:
    """Output directory, manifest and stage bookkeeping of one pipeline run."""

    def __init__(self, cfg: dict, out_dir: Path, pipeline: str):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.formats = set(cfg["output"]["formats"])
        self.geom = config.build_geometry(cfg)
        self.mats = config.build_materials(cfg)
        self.waves = config.build_waves(cfg)
        self.res = cfg["numerics"]["cell_resolution"]
        self.manifest = {
            "version": __version__,
            "backend": _backend.active_backend(),
            "pipeline": pipeline,
            "config_hash": config.config_hash(cfg),
            "config": cfg,
            "status": "running",
            "partial": False,
            "mesh_hashes": {},
            "results": {},
            "cache": {},
            "files": [],
            "timings": {},
        }
        self._mesh = None
        self._reference = {}

    def path(self, name: str) -> Path:
        self.manifest["files"].append(name)
        return self.out / name

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except Exception as exc:
            self.manifest["partial"] = bool(self.manifest["files"])
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        finally:
            self.manifest["timings"][name] = self.manifest["timings"].get(name, 0.0) + \
                time.perf_counter() - t0

    @property
    def mesh(self):
        if self._mesh is None:
            self._mesh = mesh_array(self.geom, self.res)
            self.manifest["mesh_hashes"]["fine"] = self._mesh.fingerprint()
        return self._mesh

    def lam(self, factor: float) -> float:
        return float(factor) * self.mats.gamma

    def write_fields(self, tag: str, mesh, e_field, j_field=None, e_dofs=None, j_dofs=None):
        vectors = {"E": e_field.value}
        if j_field is not None:
            vectors["J"] = j_field.value
        if "vtk" in self.formats:
            io.write_vtk(self.path(f"{tag}.vtk"), mesh, vectors, title=tag)
        if "dof" in self.formats:
            h = mesh.fingerprint()
            if e_dofs is not None:
                io.write_dofs(self.path(f"{tag}_E.dof"), e_dofs, "edge", h)
            if j_dofs is not None:
                io.write_dofs(self.path(f"{tag}_J.dof"), j_dofs, "face", h)

    def write_json(self, name: str, obj) -> None:
        if "json" in self.formats:
            self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_table(self, name: str, rows) -> None:
        if "csv" in self.formats:
            write_csv(self.path(name), rows)

    def record(self, key: str, stats: dict) -> None:
        rest, timed = _split_stats(stats)
        self.manifest["results"][key] = rest
        if timed:
            self.manifest["timings"][key + ":detail"] = timed

    def reference(self, wave):
        if wave.omega not in self._reference:
            with self.stage(f"reference[{wave.omega:g}]"):
                m = self.mesh
                sol = solve_original(m, build_coefficient_field(m, self.mats), wave, self.mats)
                self._reference[wave.omega] = sol
                self.record(f"reference[{wave.omega:g}]", sol.stats)
                self.write_fields(f"reference_w{wave.omega:g}", m, edge_field(m, sol.E),
                                  face_field(m, sol.J), sol.E, sol.J)
        return self._reference[wave.omega]


def _stage_reference(run: Run):
    for wave in run.waves:
        run.reference(wave)


def _stage_extended(run: Run):
    lam = run.lam(run.cfg["numerics"]["lambda_over_gamma"])
    for wave in run.waves:
        with run.stage(f"extended[{wave.omega:g}]"):
            m = run.mesh
            sol = solve_extended(m, build_coefficient_field(m, run.mats, lam=lam), wave, run.mats)
            run.record(f"extended[{wave.omega:g}]", dict(sol.stats, lam=lam))
            run.write_fields(f"extended_w{wave.omega:g}", m, edge_field(m, sol.E), face_field(m, sol.J),
                             sol.E, sol.J)


def _stage_homogenize(run: Run):
    with run.stage("homogenize"):
        _, tensors = homogenize(run.geom, run.mats, run.res)
        run.write_json("tensors_static.json", tensors.to_dict())
        run.manifest["results"]["tensors_static"] = tensors.to_dict()
    lam = run.lam(run.cfg["numerics"]["lambda_over_gamma"])
    for wave in run.waves:
        with run.stage(f"homogenize[{wave.omega:g}]"):
            _, tensors = homogenize(run.geom, run.mats, run.res, wave.omega, lam)
            run.write_json(f"tensors_w{wave.omega:g}.json", tensors.to_dict())
            run.manifest["results"][f"alpha[{wave.omega:g}]"] = tensors.alpha


def _error_row(run, wave, errs, timings, lam=None):
    rep = ErrorReport(omega=wave.omega, lam=lam, resolution=run.res, timings=timings, **errs)
    return rep.row()


def _stage_multiscale(run: Run, route: str):
    rows, costs = [], {}
    coarsen = run.cfg["numerics"]["coarsen"]
    lam = run.lam(run.cfg["numerics"]["lambda_over_gamma"])
    cache = linsolve.FactorizationCache()
    for wave in run.waves:
        key = f"{route}[{wave.omega:g}]"
        with run.stage(key):
            if route == "modified":
                res = modified_multiscale(run.geom, run.mats, wave, run.res, coarsen, run.mesh, cache)
                local = res.stats["local"]
                run.manifest["cache"][key] = {k: local[k] for k in
                                              ("factorizations_local", "local_solves", "cache_hits",
                                               "fingerprint")}
            else:
                res = original_multiscale(run.geom, run.mats, wave, run.res, lam, coarsen, run.mesh)
            run.manifest["mesh_hashes"]["homogenized"] = res.coarse.mesh.fingerprint()
            run.write_fields(f"{route}_w{wave.omega:g}", res.mesh, res.EM, res.J, res.EM_edges,
                             res.J_faces)
            stage_stats = {k: v for k, v in res.stats.items() if isinstance(v, dict)}
            run.manifest["results"][key] = {
                "stages": {k: _split_stats(v)[0] for k, v in stage_stats.items()},
            }
        if run.cfg["numerics"]["reference"]:
            ref = run.reference(wave)
            with run.stage(f"{key}:errors"):
                errs = multiscale_errors(ref, res)
                run.manifest["results"][key]["errors"] = errs
                stages = dict(stage_stats, reference=ref.stats)
                costs[wave.omega] = cost_report(stages)
                rows.append(_error_row(run, wave, errs, {f"{k}_wall_time": v["wall_time"]
                                                         for k, v in stages.items()},
                                       lam if route == "original" else None))
    if rows:
        run.write_table(f"errors_{route}.csv", rows)
        cost_rows = []
        for om, c in costs.items():
            for name, r in c["stages"].items():
                cost_rows.append({"omega": om, "stage": name, **r})
        run.write_table(f"costs_{route}.csv", cost_rows)
        run.manifest["timings"][f"{route}:cost_ratio"] = {f"{om:g}": c.get("ratio") for om, c in costs.items()}


def _stage_extension_study(run: Run):
    lams = [run.lam(f) for f in run.cfg["numerics"]["lambdas_over_gamma"]]
    rows = []
    for wave in run.waves:
        ref = run.reference(wave)
        with run.stage(f"extension-study[{wave.omega:g}]"):
            r, slope = extension_convergence_study(run.mesh, run.mats, wave, lams, reference=ref)
            rows += r
            run.manifest["results"][f"extension-study[{wave.omega:g}]"] = {
                "slope": slope, "errors": [x["err"] for x in r]}
    run.write_table("extension_study.csv", rows)


def _stage_alpha_study(run: Run):
    lams = [run.lam(f) for f in run.cfg["numerics"]["lambdas_over_gamma"]]
    coarse = mesh_array(run.geom, run.res // run.cfg["numerics"]["coarsen"], inclusions=False)
    rows = []
    for wave in run.waves:
        with run.stage(f"alpha-study[{wave.omega:g}]"):
            r = alpha_study(run.geom, run.mats, wave, lams, run.res, coarse)
            rows += r
            run.manifest["results"][f"alpha-study[{wave.omega:g}]"] = {
                "alpha": [x["alpha"] for x in r], "J0_l2_alpha": [x["J0_l2_alpha"] for x in r]}
    run.write_table("alpha_study.csv", rows)


STAGES = {
    "reference": [_stage_reference],
    "extended": [_stage_extended],
    "homogenize": [_stage_homogenize],
    "original-multiscale": [lambda r: _stage_multiscale(r, "original")],
    "modified-multiscale": [lambda r: _stage_multiscale(r, "modified")],
    "extension-study": [_stage_extension_study],
    "alpha-study": [_stage_alpha_study],
}
STAGES["full"] = (STAGES["homogenize"] + STAGES["reference"] + STAGES["modified-multiscale"]
                  + STAGES["original-multiscale"] + STAGES["extension-study"] + STAGES["alpha-study"])


def check_artifacts(out_dir, manifest: dict) -> dict:
    """Invariant checks on the files and numbers of a finished run.

    Returns:
        Mapping check name -> bool.
    """
    out = Path(out_dir)
    checks = {}
    files = manifest["files"]
    present = {p.name for p in out.iterdir() if p.name != "manifest.json"}
    checks["all_files_exist"] = all((out / f).is_file() for f in files)
    checks["no_orphan_files"] = present <= set(files)
    ok = True
    for f in files:
        if f.endswith(".vtk"):
            d = io.read_vtk(out / f)
            n = d["tets"].shape[0]
            ok &= bool(np.all(d["cell_types"] == io.VTK_TETRA))
            ok &= all(v.shape[0] == n for v in d["cell_data"].values())
        elif f.endswith(".dof"):
            h, x = io.read_dofs(out / f)
            ok &= x.size == h["dimension"]
    checks["artifacts_parse"] = bool(ok)
    res = manifest["results"].get("residuals", {})
    if res:
        checks["residuals_within_tolerance"] = res["worst"] <= manifest["config"]["numerics"]["residual_tol"]
    n = int(np.prod(manifest["config"]["geometry"]["counts"]))
    for key, c in manifest["cache"].items():
        checks[f"{key}:single_factorization"] = (c["factorizations_local"] <= 1 and c["local_solves"] == n
                                                 and c["cache_hits"] >= n - 1)
    for key, r in manifest["results"].items():
        if key.startswith("extension-study"):
            e = r["errors"]
            checks[f"{key}:decreasing"] = all(b < a for a, b in zip(e, e[1:]))
        if key.startswith("tensors_static"):
            eps = HomogenizedTensors.from_dict(r).eps_hat.real
            checks["eps_hat_symmetric_positive"] = bool(np.allclose(eps, eps.T, atol=1e-10)
                                                        and np.linalg.eigvalsh(eps)[0] > 0)
    return checks


def run_pipeline(cfg: dict, out_dir=None, pipeline: str | None = None, threads: int | None = None,
                 check: bool = False) -> tuple[int, dict]:
    """Execute one pipeline and write its artifacts.

    Args:
        cfg: Validated config.
        out_dir: Output directory (defaults to the config's).
        pipeline: Override of the config's pipeline.
        threads: Cap on kernel threads.
        check: Run the artifact invariant checks afterwards.

    Returns:
        ``(exit status, manifest)``.
    """
    pipeline = pipeline or cfg["pipeline"]
    if pipeline not in STAGES:
        raise config.ConfigError(f"unknown pipeline {pipeline!r}")
    if threads:
        _backend.set_num_threads(threads)
    linsolve.RESIDUAL_TOL = cfg["numerics"]["residual_tol"]
    linsolve.RESIDUALS.reset()
    run = Run(cfg, Path(out_dir or cfg["output"]["directory"]), pipeline)
    status = EXIT_OK
    try:
        for stage in STAGES[pipeline]:
            stage(run)
        run.manifest["status"] = "ok"
    except StageError as exc:
        status = EXIT_FAILED
        run.manifest.update(status="failed", failed_stage=exc.stage, error=str(exc),
                            traceback=traceback.format_exc(limit=5))
    run.manifest["results"]["residuals"] = {"count": linsolve.RESIDUALS.count,
                                            "worst": linsolve.RESIDUALS.worst}
    if check and status == EXIT_OK:
        try:
            checks = check_artifacts(run.out, run.manifest)
        except Exception as exc:  # a broken artifact is a failed check, not a crash
            checks = {"artifacts_readable": False}
            run.manifest["error"] = f"check failed: {type(exc).__name__}: {exc}"
        run.manifest["checks"] = checks
        if not all(checks.values()):
            status = EXIT_FAILED
            run.manifest["status"] = "check-failed"
    (run.out / "manifest.json").write_text(json.dumps(run.manifest, indent=2, sort_keys=True,
                                                      default=_json_default) + "\n")
    return status, run.manifest


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nhdms", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="run a pipeline from a JSON config")
    p.add_argument("config", help="config file, or a shipped preset name (case_5_1, case_5_2)")
    p.add_argument("--pipeline", choices=config.PIPELINES)
    p.add_argument("--threads", type=int)
    p.add_argument("--check", action="store_true", help="verify invariants on the produced artifacts")
    p.add_argument("--out", help="output directory")
    args = parser.parse_args(argv)
    try:
        cfg = config.load(args.config) if Path(args.config).is_file() else config.preset(args.config)
        status, manifest = run_pipeline(cfg, args.out, args.pipeline, args.threads, args.check)
    except config.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if status != EXIT_OK:
        print(f"error: {manifest.get('error', manifest['status'])}", file=sys.stderr)
        if "checks" in manifest:
            bad = [k for k, v in manifest["checks"].items() if not v]
            print(f"failed checks: {', '.join(bad)}", file=sys.stderr)
    else:
        print(f"{manifest['pipeline']}: ok ({len(manifest['files'])} files in "
              f"{args.out or cfg['output']['directory']})")
    return status


if __name__ == "__main__":
    sys.exit(main())
