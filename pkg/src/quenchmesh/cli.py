"""Command-line front end.

Verbs:
  simulate  adaptive moving-mesh runs per epsilon; VTK snapshots, run
            logs, and a touchdown CSV
  predict   asymptotic engine: layer profiles (disk-cached), domain
            skeleton, firefront slices, ranked touchdown predictions
  compare   distances from simulated touchdown points to the skeleton
            and to the ranked predictions, plus overlay data
  profiles  dump the layer-profile tables and constants
  mesh      generate and inspect an initial mesh

All flags can also be given in a plain-text config file (``key = value``
per line, ``#`` comments); command-line flags override the file.
"""

import argparse
import concurrent.futures
import csv
import os
import sys
import time
import traceback

import numpy as np

from .errors import QuenchMeshError, ResolutionError, SolveError
from .geometry import PRESETS, load_domain_file, preset_domain
from .mesh import generate_initial_mesh, signed_areas, write_vtk
from .profiles import (T0, LayerProfile, export_profile_csv,
                       profile_constants, solve_w0, solve_w1bar,
                       wkb_envelope_fit)
from .skeleton import (compute_skeleton, firefront, predict_touchdown,
                       prediction_to_csv, skeleton_to_csv)
from .timeint import run_simulation, touchdown_troughs

TOUCHDOWN_CSV_HEADER = "# quenchmesh touchdown v1"
COMPARE_CSV_HEADER = "# quenchmesh compare v1"
OVERLAY_CSV_HEADER = "# quenchmesh overlay v1"
FRONT_CSV_HEADER = "# quenchmesh firefront v1"

EXIT_BAD_CONFIG = 2
EXIT_MISSING_INPUT = 3


# ---------------------------------------------------------------------------
# configuration

class ConfigError(Exception):
    pass


def _read_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            for ln, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected 'key = value'")
                key, val = line.split("=", 1)
                values[key.strip().replace("-", "_")] = val.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    return values


def parse_eps_list(text):
    """Comma list and/or geometric ranges ``lo:hi:count``."""
    out = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ":" in tok:
            parts = tok.split(":")
            if len(parts) != 3:
                raise ConfigError(f"bad eps range {tok!r}; use lo:hi:count")
            lo, hi, cnt = float(parts[0]), float(parts[1]), int(parts[2])
            if lo <= 0 or hi <= 0 or cnt < 2:
                raise ConfigError(f"bad eps range {tok!r}")
            out.extend(np.geomspace(lo, hi, cnt).tolist())
        else:
            out.append(float(tok))
    if not out:
        raise ConfigError("empty eps list")
    if any(e <= 0 for e in out):
        raise ConfigError("eps values must be positive")
    return out


def _parse_snapshots(text):
    if text in (None, "", "auto"):
        return None
    return sorted(float(tok) for tok in str(text).split(",") if tok.strip())


def default_snapshots(n=12):
    """Geometrically spaced times approaching the flat-state quench."""
    return [T0 * (1.0 - 0.5 ** k) for k in range(1, n + 1)]


class RunConfig:
    """Validated bag of options shared by all verbs."""

    def __init__(self, args):
        cfg = _read_config_file(args.config) if args.config else {}

        def pick(name, default=None):
            flag = getattr(args, name, None)
            if flag is not None:
                return flag
            return cfg.get(name, default)

        self.domain_name = pick("domain")
        self.domain_file = pick("domain_file")
        self.eps = parse_eps_list(pick("eps", "0.02"))
        self.n_target = int(pick("n", 6240))
        self.tau = float(pick("tau", 0.01))
        self.rtol = float(pick("rtol", 1e-6))
        self.out = pick("out", "quenchmesh-out")
        self.grid_h = float(pick("grid_h", 0.01))
        self.snapshots = _parse_snapshots(pick("snapshots"))
        self.jobs = int(pick("jobs", 1))
        self.fixed_mesh = bool(getattr(args, "fixed_mesh", False)
                               or cfg.get("fixed_mesh", "") in ("1", "true"))
        if self.n_target < 50:
            raise ConfigError("mesh target N must be at least 50")
        if self.grid_h <= 0:
            raise ConfigError("grid-h must be positive")
        if self.domain_name and self.domain_file:
            raise ConfigError("give either --domain or --domain-file, not both")
        if not self.domain_name and not self.domain_file:
            self.domain_name = "rect"

    def make_domain(self):
        if self.domain_file:
            return load_domain_file(self.domain_file)
        return preset_domain(self.domain_name)

    @property
    def domain_label(self):
        if self.domain_file:
            return os.path.splitext(os.path.basename(self.domain_file))[0]
        return self.domain_name


# ---------------------------------------------------------------------------
# profile disk cache

def _cache_dir():
    root = os.environ.get("XDG_CACHE_HOME",
                          os.path.join(os.path.expanduser("~"), ".cache"))
    path = os.path.join(root, "quenchmesh")
    os.makedirs(path, exist_ok=True)
    return path


def load_profiles(L=30.0, n=4000, cache=True):
    """Layer profiles (w0, w1bar), cached to disk keyed by (L, n)."""
    path = os.path.join(_cache_dir(), f"profiles-L{L:g}-n{n}.npz")
    if cache and os.path.exists(path):
        try:
            with np.load(path) as dat:
                w0 = LayerProfile(dat["grid0"], dat["val0"], float(dat["far0"]))
                w1 = LayerProfile(dat["grid1"], dat["val1"], float(dat["far1"]))
                return w0, w1
        except Exception:
            pass  # stale or corrupt cache: recompute below
    w0 = solve_w0(L=L, n=n)
    w1 = solve_w1bar(w0)
    if cache:
        tmp = path + f".tmp{os.getpid()}.npz"
        np.savez(tmp, grid0=w0.grid, val0=w0.values, far0=w0.far_field_limit,
                 grid1=w1.grid, val1=w1.values, far1=w1.far_field_limit)
        os.replace(tmp, path)
    return w0, w1


# ---------------------------------------------------------------------------
# simulate

def _sim_one(config, eps):
    """One simulation; returns the touchdown-CSV row and writes artifacts."""
    domain = config.make_domain()
    out_dir = os.path.join(config.out,
                           f"sim-{config.domain_label}-eps{eps:g}")
    os.makedirs(out_dir, exist_ok=True)
    snap_times = config.snapshots or default_snapshots()
    log_path = os.path.join(out_dir, "run.log")
    t_start = time.time()
    with open(log_path, "w") as log:
        log.write(f"domain={config.domain_label} eps={eps:g} "
                  f"N={config.n_target} tau={config.tau:g} "
                  f"rtol={config.rtol:g} move={not config.fixed_mesh}\n")
        result = run_simulation(domain, eps, target_N=config.n_target,
                                tau=config.tau, rtol=config.rtol,
                                move=not config.fixed_mesh,
                                snapshot_times=snap_times)
        for rec in result.history:
            log.write(f"t={rec.t:.8f} dt={rec.dt:.3e} min_u={rec.min_u:.6f} "
                      f"steps={rec.n_steps} I_h={rec.mesh_energy:.6g}\n")
        log.write(f"quenched={result.quenched} t_final={result.t_final:.8f} "
                  f"min_u={result.min_u:.6f} "
                  f"wall={time.time() - t_start:.1f}s\n")

    for st, (snap_mesh, snap_u) in sorted(result.snapshots.items()):
        write_vtk(snap_mesh, os.path.join(out_dir, f"snap-t{st:.6f}.vtk"),
                  point_data={"u": snap_u})
    write_vtk(result.mesh, os.path.join(out_dir, "final.vtk"),
              point_data={"u": result.U, "v": result.V})

    troughs = touchdown_troughs(result.mesh, result.U)
    row = [f"{eps:.10g}", str(result.mesh.n_triangles),
           f"{result.t_final:.10g}", str(len(troughs))]
    for tr in troughs:
        row.extend([f"{tr.location[0]:.10g}", f"{tr.location[1]:.10g}"])
    row.append(f"{result.min_u:.10g}")
    return row


def _run_pool(config, work, items):
    """Run work(item) over items, in order, honouring --jobs."""
    if config.jobs <= 1 or len(items) <= 1:
        return [work(config, it) for it in items]
    with concurrent.futures.ProcessPoolExecutor(
            max_workers=min(config.jobs, len(items))) as pool:
        futures = [pool.submit(work, config, it) for it in items]
        return [f.result() for f in futures]


def cmd_simulate(config):
    os.makedirs(config.out, exist_ok=True)
    rows = _run_pool(config, _sim_one, config.eps)
    csv_path = os.path.join(config.out,
                            f"touchdown-{config.domain_label}.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write(TOUCHDOWN_CSV_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(["eps", "N", "t_touch", "n_points",
                         "x_i", "y_i", "...", "u_min"])
        for row in rows:
            writer.writerow(row)
    for row in rows:
        print(f"eps={row[0]} N={row[1]} t_touch={row[2]} "
              f"n_points={row[3]} u_min={row[-1]}")
    print(f"touchdown table: {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# predict

def _write_front_csv(path, fronts, t, eps):
    with open(path, "w") as fh:
        fh.write(FRONT_CSV_HEADER + "\n")
        fh.write(f"# t={t:.10g} eps={eps:.10g}\n")
        fh.write("loop,x,y\n")
        for li, loop in enumerate(fronts):
            for x, y in loop:
                fh.write(f"{li},{x:.10g},{y:.10g}\n")


def cmd_predict(config):
    os.makedirs(config.out, exist_ok=True)
    domain = config.make_domain()
    w0, w1 = load_profiles()
    constants = profile_constants(w0, w1)
    skeleton = compute_skeleton(domain, grid_h=config.grid_h)
    skeleton_to_csv(skeleton,
                    os.path.join(config.out,
                                 f"skeleton-{config.domain_label}.csv"))
    for eps in config.eps:
        pred = predict_touchdown(domain, eps, constants, skeleton=skeleton)
        prediction_to_csv(pred, os.path.join(
            config.out, f"prediction-{config.domain_label}-eps{eps:g}.csv"))
        for st in config.snapshots or ():
            if not 0 < st < T0:
                continue
            fronts = firefront(domain, st, eps, grid_h=config.grid_h)
            _write_front_csv(
                os.path.join(config.out,
                             f"firefront-{config.domain_label}"
                             f"-eps{eps:g}-t{st:.6f}.csv"),
                fronts, st, eps)
        pts = "; ".join(f"({p[0]:.4f}, {p[1]:.4f}) score {s:.5f}"
                        for p, s in zip(pred.points, pred.scores))
        print(f"eps={eps:g} regime={pred.regime} t_S={pred.t_S:.6g} "
              f"T_estimate={pred.T_estimate:.6g}"
              + (" [degenerate ring]" if pred.degenerate_ring else "")
              + f": {pts}")
    return 0


# ---------------------------------------------------------------------------
# compare

def _read_touchdown_csv(path):
    rows = {}
    with open(path) as fh:
        header = fh.readline()
        if TOUCHDOWN_CSV_HEADER not in header:
            raise ConfigError(f"{path} is not a touchdown CSV")
        reader = csv.reader(fh)
        next(reader)  # column names
        for row in reader:
            eps = float(row[0])
            n_pts = int(row[3])
            pts = np.array([[float(row[4 + 2 * k]), float(row[5 + 2 * k])]
                            for k in range(n_pts)])
            rows[eps] = {"N": int(row[1]), "t_touch": float(row[2]),
                         "points": pts, "u_min": float(row[-1])}
    return rows


def _read_points_csv(path, expect_header, n_cols=2):
    pts = []
    with open(path) as fh:
        header = fh.readline()
        if expect_header not in header:
            raise ConfigError(f"{path}: unexpected header")
        line = fh.readline()
        while line.startswith("#"):
            line = fh.readline()
        # `line` now holds the column-name row; data follows
        for raw in fh:
            parts = raw.strip().split(",")
            if len(parts) >= n_cols:
                pts.append([float(v) for v in parts[:n_cols]])
    return np.asarray(pts)


def cmd_compare(config):
    from .skeleton import PREDICTION_CSV_HEADER, SKELETON_CSV_HEADER

    td_path = os.path.join(config.out,
                           f"touchdown-{config.domain_label}.csv")
    sk_path = os.path.join(config.out,
                           f"skeleton-{config.domain_label}.csv")
    missing = [p for p in (td_path, sk_path) if not os.path.exists(p)]
    pred_paths = {}
    for eps in config.eps:
        p = os.path.join(config.out,
                         f"prediction-{config.domain_label}-eps{eps:g}.csv")
        if os.path.exists(p):
            pred_paths[eps] = p
        else:
            missing.append(p)
    if missing:
        print("compare: missing inputs (run simulate and predict first):",
              file=sys.stderr)
        for p in missing:
            print(f"  {p}", file=sys.stderr)
        return EXIT_MISSING_INPUT

    touchdowns = _read_touchdown_csv(td_path)
    sk_pts = _read_points_csv(sk_path, SKELETON_CSV_HEADER)
    from scipy.spatial import cKDTree
    sk_tree = cKDTree(sk_pts)

    out_rows = []
    overlay_rows = [("skeleton", x, y, "") for x, y in sk_pts]
    for eps in config.eps:
        if eps not in touchdowns:
            close = [e for e in touchdowns if abs(e - eps) < 1e-12]
            if not close:
                print(f"compare: no simulated touchdown row for eps={eps:g}",
                      file=sys.stderr)
                return EXIT_MISSING_INPUT
            eps = close[0]
        sim = touchdowns[eps]
        pred_pts = _read_points_csv(pred_paths[eps], PREDICTION_CSV_HEADER)
        pred_tree = cKDTree(pred_pts) if len(pred_pts) else None
        for k, pt in enumerate(sim["points"]):
            d_sk = float(sk_tree.query(pt)[0])
            d_pred = float(pred_tree.query(pt)[0]) if pred_tree else np.nan
            out_rows.append((eps, k, pt[0], pt[1], d_sk, d_pred))
            overlay_rows.append((f"touchdown-eps{eps:g}", pt[0], pt[1],
                                 sim["t_touch"]))
        for pt in pred_pts:
            overlay_rows.append((f"prediction-eps{eps:g}", pt[0], pt[1], ""))

    cmp_path = os.path.join(config.out, f"compare-{config.domain_label}.csv")
    with open(cmp_path, "w", newline="") as fh:
        fh.write(COMPARE_CSV_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(["eps", "point_index", "x", "y",
                         "dist_to_skeleton", "dist_to_prediction"])
        for row in out_rows:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v
                             for v in row])
    ov_path = os.path.join(config.out, f"overlay-{config.domain_label}.csv")
    with open(ov_path, "w", newline="") as fh:
        fh.write(OVERLAY_CSV_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(["layer", "x", "y", "t"])
        writer.writerows(overlay_rows)

    for eps, k, x, y, d_sk, d_pred in out_rows:
        print(f"eps={eps:g} point {k} ({x:+.4f}, {y:+.4f}): "
              f"to skeleton {d_sk:.4f}, to prediction {d_pred:.4f}")
    print(f"comparison table: {cmp_path}")
    print(f"overlay data: {ov_path}")
    return 0


# ---------------------------------------------------------------------------
# profiles / mesh

def cmd_profiles(config):
    os.makedirs(config.out, exist_ok=True)
    w0, w1 = load_profiles()
    constants = profile_constants(w0, w1)
    export_profile_csv(w0, os.path.join(config.out, "profile-w0.csv"))
    export_profile_csv(w1, os.path.join(config.out, "profile-w1bar.csv"))
    slope = wkb_envelope_fit(w0)
    with open(os.path.join(config.out, "profile-constants.txt"), "w") as fh:
        fh.write(f"z0 = {constants.z0:.10g}\n"
                 f"w0(z0) = {constants.w0_at_z0:.10g}\n"
                 f"w1bar(z0) = {constants.w1bar_at_z0:.10g}\n"
                 f"alpha = {constants.alpha:.10g}\n"
                 f"wkb_rate_fit = {slope:.10g}\n"
                 f"wkb_rate_theory = {constants.wkb_rate:.10g}\n")
    print(f"z0={constants.z0:.6f} w0(z0)={constants.w0_at_z0:.6f} "
          f"w1bar(z0)={constants.w1bar_at_z0:.6f} "
          f"alpha={constants.alpha:.6f}")
    print(f"oscillation rate: fitted {slope:.6f}, "
          f"theory {constants.wkb_rate:.6f}")
    return 0


def cmd_mesh(config):
    os.makedirs(config.out, exist_ok=True)
    domain = config.make_domain()
    mesh = generate_initial_mesh(domain, config.n_target)
    path = os.path.join(config.out, f"mesh-{config.domain_label}.vtk")
    write_vtk(mesh, path)
    areas = signed_areas(mesh.vertices, mesh.triangles)
    print(f"domain={config.domain_label} vertices={mesh.n_vertices} "
          f"triangles={mesh.n_triangles} interior={mesh.n_interior}")
    print(f"areas: min={areas.min():.3e} max={areas.max():.3e} "
          f"total={areas.sum():.6f}")
    print(f"mesh written to {path}")
    return 0


# ---------------------------------------------------------------------------
# entry point

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="quenchmesh",
        description="Adaptive moving-mesh simulation and asymptotic "
                    "touchdown prediction for the fourth-order MEMS "
                    "quenching problem.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, fn in [("simulate", cmd_simulate), ("predict", cmd_predict),
                     ("compare", cmd_compare), ("profiles", cmd_profiles),
                     ("mesh", cmd_mesh)]:
        p = sub.add_parser(verb)
        p.set_defaults(func=fn)
        p.add_argument("--domain", help="domain preset name")
        p.add_argument("--domain-file", help="domain description file")
        p.add_argument("--eps", help="value, comma list, or lo:hi:count "
                                     "geometric range")
        p.add_argument("--n", type=int, help="mesh size target (elements)")
        p.add_argument("--tau", type=float, help="mesh relaxation time scale")
        p.add_argument("--rtol", type=float, help="integrator tolerance")
        p.add_argument("--out", help="output directory")
        p.add_argument("--grid-h", type=float, dest="grid_h",
                       help="skeleton/firefront grid spacing")
        p.add_argument("--snapshots", help="comma list of times, or 'auto'")
        p.add_argument("--config", help="config file (flags override)")
        p.add_argument("--jobs", type=int, help="parallel workers for sweeps")
        if verb == "simulate":
            p.add_argument("--fixed-mesh", action="store_true",
                           help="disable mesh movement")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        config = RunConfig(args)
        return args.func(config)
    except (ConfigError, QuenchMeshError) as exc:
        print(f"quenchmesh {args.verb}: {exc}", file=sys.stderr)
        if isinstance(exc, (ResolutionError, SolveError)):
            return 1
        return EXIT_BAD_CONFIG
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
