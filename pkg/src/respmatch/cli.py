"""Command-line interface: ``respmatch <subcommand> ...``.

Every subcommand reads an optional ``--config`` file; explicit flags win
over config values.  Exit status is 0 on success, 1 on a runtime failure and
2 on bad usage.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from . import __version__
from .analysis import (
    DEFAULT_TOL_F,
    DEFAULT_TOL_V,
    HullPoint,
    embedding_pca,
    excess_energy,
    lower_convex_hull,
    match_structures,
    write_hull_csv,
    write_pca_csv,
)
from .config import RunConfig, load_config, override
from .elements import atomic_number, parse_formula, symbol
from .extxyz import read_extxyz, write_extxyz
from .noise import NoiseSpec, make_training_sample
from .potential import Hyper, PotentialParams, load_params
from .potential.model import evaluate
from .rss import fit_molar_volumes, generate
from .structure import Structure, make_supercell, pair_distances, random_rotation, rotate
from .trainer import train, verify_derivatives

log = logging.getLogger("respmatch")


class CLIError(RuntimeError):
    pass


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _read(path) -> list[Structure]:
    frames = read_extxyz(path)
    if not frames:
        raise CLIError(f"{path}: no structures")
    return frames


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_perturb(args) -> int:
    cfg = _config(args)
    spec = cfg.noise
    n = args.n_samples or spec.n_noise_per_structure
    rng = np.random.default_rng(args.seed)
    structures = _read(args.input)
    noised, meta, forces, stress = [], [], [], []
    for k, s in enumerate(structures):
        for j in range(n):
            smp = make_training_sample(s, spec, rng)
            noised.append(smp.noised)
            meta.append(
                {
                    "source": k,
                    "sample": j,
                    "max_displacement": float(np.max(np.linalg.norm(smp.displacements, axis=1))),
                    "target_stress": " ".join(repr(float(v)) for v in smp.target_stress.ravel()),
                }
            )
            forces.append(smp.target_forces)
            stress.append(smp.target_stress)
    write_extxyz(args.output, noised, meta)
    if args.targets:
        with open(args.targets, "wb") as fh:
            np.savez(
                fh,
                forces=np.concatenate(forces),
                stress=np.array(stress),
                n_atoms=np.array([len(s) for s in noised]),
            )
    print(f"wrote {len(noised)} noised structures to {args.output}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    cfg = override(cfg, "train", seed=args.seed, epochs=args.epochs, learning_rate=args.lr, lr_final=args.lr_final, beta=args.beta)
    cfg = override(cfg, "noise", d_max=args.d_max, gamma_max=args.gamma_max)
    data = _read(args.data)
    params, report = train(data, cfg.noise, cfg.train, cfg.potential, log_path=args.log, checkpoint_path=args.output)
    print(
        f"trained {params.n_params()} parameters for {len(report.epochs)} epochs in {report.wall_clock:.1f} s; "
        f"best validation loss {report.best_val_loss[-1] if report.best_val_loss else float('nan'):.5g} "
        f"at epoch {report.best_epoch}"
    )
    return 0


def cmd_generate(args) -> int:
    cfg = _config(args)
    changes = {}
    if args.composition:
        changes["composition"] = parse_formula(args.composition)
    if args.molar_volume_range:
        changes["molar_volume_range"] = tuple(args.molar_volume_range)
    if args.formula_units:
        changes["formula_units"] = tuple(args.formula_units)
    if args.molecule:
        changes["pbc"] = False
    cfg = override(cfg, "generate", **changes)
    cfg = override(cfg, "run", n_samples=args.n_samples, workers=args.workers)
    gen = cfg.generate
    params = load_params(args.checkpoint)
    missing = [z for z in gen.composition if z not in params.elements]
    if missing:
        raise CLIError(f"elements {[symbol(z) for z in missing]} are not in the checkpoint")
    volumes = None
    if gen.pbc and gen.molar_volume_range is None:
        if not args.volumes_from:
            raise CLIError("periodic generation needs --molar-volume-range or --volumes-from")
        volumes = fit_molar_volumes(_read(args.volumes_from))
    seed = args.seed if args.seed is not None else cfg.train.seed
    results = generate(params, gen, cfg.run.n_samples, seed=seed, volumes=volumes, workers=cfg.run.workers)
    meta = []
    for r in results:
        meta.append(
            {
                "seed": r.seed,
                "pseudo_energy": r.pseudo_energy,
                "pseudo_energy_per_atom": r.pseudo_energy_per_atom,
                "converged": r.converged,
                "steps": r.steps,
                "max_force": r.max_force_final,
                **({"error": r.error} if r.error else {}),
            }
        )
    write_extxyz(args.output, [r.structure for r in results], meta)
    n_conv = sum(r.converged for r in results)
    print(f"wrote {len(results)} relaxed structures ({n_conv} converged) to {args.output}")
    return 0


def _energies_per_atom(structures, checkpoint):
    if checkpoint:
        p = load_params(checkpoint)
        return [float(evaluate(p, [s], forces=False, stress=False).energy[0]) / len(s) for s in structures]
    out = []
    for k, s in enumerate(structures):
        if "pseudo_energy_per_atom" in s.info:
            out.append(float(s.info["pseudo_energy_per_atom"]))
        elif "pseudo_energy" in s.info:
            out.append(float(s.info["pseudo_energy"]) / len(s))
        else:
            raise CLIError(f"structure {k} has no pseudo_energy; pass --checkpoint")
    return out


def cmd_evaluate(args) -> int:
    structures = _read(args.structures)
    refs = _read(args.references)
    energies = None
    if args.checkpoint or all("pseudo_energy" in s.info for s in structures):
        energies = _energies_per_atom(structures, args.checkpoint)
    rows = []
    n_matched = 0
    for k, s in enumerate(structures):
        best_ref, best_d, matched = "", float("inf"), False
        for j, ref in enumerate(refs):
            ok, d = match_structures(s, ref, tol_f=args.tol_f, tol_v=args.tol_v)
            if d < best_d:
                best_ref, best_d, matched = str(ref.info.get("name", j)), d, ok
        n_matched += matched
        mv = s.volume / len(s) if s.pbc else None
        rows.append(
            [
                k,
                s.info.get("seed", ""),
                "" if energies is None else repr(energies[k]),
                "" if mv is None else repr(mv),
                best_ref,
                repr(best_d),
                int(matched),
            ]
        )
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label", "energy_per_atom", "molar_volume", "reference", "distance", "matched"])
        w.writerows(rows)
    print(f"{n_matched}/{len(structures)} structures match a reference; report in {args.output}")
    return 0


def cmd_hull(args) -> int:
    structures = _read(args.structures)
    a = atomic_number(args.element_a)
    b = atomic_number(args.element_b)
    if args.endmembers:
        structures = structures + _read(args.endmembers)
    energies = _energies_per_atom(structures, args.checkpoint)
    xs = []
    for k, s in enumerate(structures):
        comp = s.composition()
        if set(comp) - {a, b}:
            raise CLIError(f"structure {k} contains elements other than {symbol(a)} and {symbol(b)}")
        xs.append(comp.get(a, 0) / len(s))
    xs = np.array(xs)
    energies = np.array(energies)
    pure_a = energies[xs == 1.0]
    pure_b = energies[xs == 0.0]
    if not len(pure_a) or not len(pure_b):
        raise CLIError("both endmembers are required (use --endmembers)")
    e_a, e_b = pure_a.min(), pure_b.min()
    points = [
        HullPoint(float(x), float(excess_energy(e, x, e_a, e_b)), str(s.info.get("seed", k)))
        for k, (x, e, s) in enumerate(zip(xs, energies, structures))
    ]
    on_hull, _ = lower_convex_hull(points)
    write_hull_csv(args.output, points, on_hull)
    print(f"{int(np.sum(on_hull))} of {len(points)} structures on the hull; written to {args.output}")
    return 0


def cmd_embed_pca(args) -> int:
    p = load_params(args.checkpoint)
    coords, ratio = embedding_pca(p.embeddings)
    write_pca_csv(args.output, p.elements, coords)
    print(f"explained variance {ratio[0]:.3f}, {ratio[1]:.3f}; written to {args.output}")
    return 0


def _random_structure(rng, pbc):
    n = int(rng.integers(2, 7))
    for _ in range(1000):
        if pbc:
            cell = np.diag(rng.uniform(3.5, 4.5, 3)) + rng.uniform(-0.3, 0.3, (3, 3))
            pos = rng.random((n, 3)) @ cell
        else:
            cell = None
            pos = rng.uniform(0, 2.5, (n, 3))
        s = Structure(rng.choice([1, 6, 8], n), pos, cell)
        d = pair_distances(s)
        if d.size == 0 or d.min() > 0.9:
            return s
    raise CLIError("could not draw a random test structure")


def cmd_verify(args) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    hyper = Hyper(r_cut=3.0, n_max=3, l_max=2, nu_max=3, n_embedding=2, hidden=8)
    p = PotentialParams.initialize([1, 6, 8], hyper, rng)
    p = p.with_vector(p.to_vector())
    p.b1[:] = rng.normal(size=p.b1.shape) * 0.1
    failures = 0
    for trial in range(args.trials):
        s = _random_structure(rng, pbc=trial % 2 == 0)
        smp = make_training_sample(s, NoiseSpec(d_max=0.2, gamma_max=0.05), rng)
        rep = verify_derivatives(p, smp, beta=cfg.train.beta)
        status = "ok" if rep.ok else "FAIL"
        failures += not rep.ok
        print(
            f"derivatives {trial:2d} N={len(s)} pbc={int(s.pbc)}: force {rep.force_error:.2e} "
            f"stress {rep.stress_error:.2e} gradient {rep.gradient_error:.2e} {status}"
        )
    s = _random_structure(rng, pbc=True)
    e0 = evaluate(p, [s], stress=False)
    rot = random_rotation(rng)
    e_rot = evaluate(p, [rotate(s, rot)], stress=False)
    perm = rng.permutation(len(s))
    e_perm = evaluate(p, [Structure(s.species[perm], s.positions[perm], s.cell)], stress=False)
    e_sup = evaluate(p, [make_supercell(s, 2, 2, 2)], forces=False, stress=False)
    scale = abs(e0.energy[0]) or 1.0
    checks = {
        "rotation invariance": abs(e_rot.energy[0] - e0.energy[0]) / scale < 1e-9,
        "force equivariance": np.max(np.abs(e_rot.forces - e0.forces @ rot.T)) < 1e-8,
        "permutation invariance": abs(e_perm.energy[0] - e0.energy[0]) / scale < 1e-9,
        "extensivity": abs(e_sup.energy[0] - 8 * e0.energy[0]) / (8 * scale) < 1e-8,
    }
    for name, ok in checks.items():
        print(f"{name}: {'ok' if ok else 'FAIL'}")
        failures += not ok
    print("all checks passed" if failures == 0 else f"{failures} checks failed")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="respmatch", description="Response-matching pseudo potentials and structure search.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI configuration file (flags override it)")
        p.add_argument("--seed", type=int, default=None, help="random seed")
        return p

    p = common(sub.add_parser("perturb", help="write noised samples and their targets"))
    p.add_argument("input", help="extxyz file with equilibrium structures")
    p.add_argument("-o", "--output", required=True, help="extxyz file for noised structures")
    p.add_argument("--targets", help="npz file for target forces and stresses")
    p.add_argument("-n", "--n-samples", type=int, help="noised copies per structure")
    p.set_defaults(func=cmd_perturb)

    p = common(sub.add_parser("train", help="fit a potential to noised copies of a dataset"))
    p.add_argument("data", help="extxyz file with equilibrium structures")
    p.add_argument("-o", "--output", required=True, help="checkpoint file (.npz)")
    p.add_argument("--log", help="CSV training log")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--lr-final", type=float, help="final learning rate (geometric decay)")
    p.add_argument("--beta", type=float, help="stress weight in the loss")
    p.add_argument("--d-max", type=float, help="maximum displacement noise (Å)")
    p.add_argument("--gamma-max", type=float, help="maximum strain noise")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("generate", help="random structure search on a trained potential"))
    p.add_argument("checkpoint")
    p.add_argument("-o", "--output", required=True, help="extxyz file for relaxed structures")
    p.add_argument("--composition", help="formula unit, e.g. C or Li2S")
    p.add_argument("-n", "--n-samples", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--molar-volume-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--formula-units", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--volumes-from", help="extxyz training structures used to fit per-element volumes")
    p.add_argument("--molecule", action="store_true", help="generate non-periodic clusters")
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("evaluate", help="match structures against references"))
    p.add_argument("structures")
    p.add_argument("references")
    p.add_argument("-o", "--output", required=True, help="CSV match report")
    p.add_argument("--checkpoint", help="recompute pseudo energies with this potential")
    p.add_argument("--tol-f", type=float, default=DEFAULT_TOL_F)
    p.add_argument("--tol-v", type=float, default=DEFAULT_TOL_V)
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("hull", help="pseudo convex hull of a binary system"))
    p.add_argument("structures")
    p.add_argument("element_a", help="endmember A (x = 1)")
    p.add_argument("element_b", help="endmember B (x = 0)")
    p.add_argument("-o", "--output", required=True, help="hull CSV")
    p.add_argument("--endmembers", help="extxyz file with endmember structures")
    p.add_argument("--checkpoint", help="recompute pseudo energies with this potential")
    p.set_defaults(func=cmd_hull)

    p = common(sub.add_parser("embed-pca", help="principal components of element embeddings"))
    p.add_argument("checkpoint")
    p.add_argument("-o", "--output", required=True, help="PCA CSV")
    p.set_defaults(func=cmd_embed_pca)

    p = common(sub.add_parser("verify", help="derivative and symmetry self-checks"))
    p.add_argument("--trials", type=int, default=6)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CLIError, ValueError, OSError, RuntimeError) as exc:
        print(f"respmatch {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
