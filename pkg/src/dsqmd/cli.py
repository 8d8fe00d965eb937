"""Command-line front end: theory, simulate, sweep, binning, dump-descriptions.

Exit codes: 0 pass, 1 tolerance breach (results still written), 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import binning, codec, harness, theory

EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE = 0, 1, 2


def _theory(args) -> int:
    rows: list[tuple[str, float]] = []
    if not any([args.rdf, args.ppr, args.dsq, args.map, args.rb, args.solve]):
        raise harness.ConfigError("pick at least one of --rdf --ppr --dsq --map --rb --solve")

    def need(*names):
        missing = [n for n in names if getattr(args, n) is None]
        if missing:
            raise harness.ConfigError("missing " + ", ".join("--" + m for m in missing))

    if args.rdf:
        need("dk", "dl", "k", "l")
        r = theory.rdf_k_or_l(theory.KorLPoint(args.sx2, args.dk, args.dl, args.k, args.l))
        rows.append(("R_KL", r.bits))
        if r.below_floor:
            rows.append(("below_central_floor", 1.0))
    if args.ppr:
        need("sv2", "rho", "k", "l")
        pp = theory.PPRParams(args.sv2, args.rho)
        rows.append(("ppr_rate", theory.ppr_rate(pp, args.k, args.l, args.sx2).bits))
        for j in range(1, args.l + 1):
            rows.append((f"ppr_d{j}", theory.ppr_distortion(pp, j, args.sx2)))
    if args.dsq or args.map or args.rb:
        need("se2", "delta", "l")
        d = theory.DSQParams(args.se2, args.delta, args.l)
        if args.dsq:
            for j in range(1, args.l + 1):
                rows.append((f"dsq_d{j}", theory.dsq_distortion(d, j, args.sx2)))
        if args.map:
            m = theory.map_dsq_to_ppr(d)
            rows += [("sigma_V2", m.sigma_V2), ("rho", m.rho)]
        if args.rb:
            need("k")
            G = theory.SCALAR_G if args.G is None else args.G
            r = theory.dsq_rb_rate(d, args.k, args.sx2, G)
            rows += [("dsq_rb_rate", r.bits), ("argmax_j", float(r.argmax_j))]
    if args.solve:
        need("dk", "dl", "k", "l")
        d = theory.solve_delta_sigma(args.dk, args.dl, args.k, args.l, args.sx2)
        rows += [("delta", d.delta), ("sigma_E2", d.sigma_E2)]
    for name, val in rows:
        print(f"{name}\t{val:.6f}")
    return EXIT_OK


def _simulate(args) -> int:
    cfg = harness.load_config(args.config)
    out = args.out or cfg.output
    res = harness.run_simulation(cfg)
    csv_path, json_path = harness.write_simulation(res, out)
    for r in res.records:
        flag = "" if r.within_tolerance else "  <-- outside tolerance"
        print(f"{r.subset:>12} {r.classification:>10} mse={r.mse:.6f}+-{r.mse_stderr:.6f} "
              f"theory={r.theory_mse:.6f} ({r.theory_source}) dev={r.mse_rel_dev:+.4f}{flag}")
    if res.warning:
        print("warning: short run, standard errors are rough", file=sys.stderr)
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK if res.passed else EXIT_TOLERANCE


def _sweep(args) -> int:
    cfg = harness.load_config(args.config)
    rows, ok = harness.run_sweep(cfg)
    path = harness.write_sweep(rows, args.out or cfg.output)
    for r in rows:
        print(f"delta={r.delta:g} sigma_E2={r.sigma_E2:g} dK={r.d_K_emp:.6f}/{r.d_K_theory:.6f} "
              f"dL={r.d_L_emp:.6f}/{r.d_L_theory:.6f} R={r.R_theory:.4f}")
    print(f"wrote {path}")
    return EXIT_OK if ok else EXIT_TOLERANCE


def _binning(args) -> int:
    cfg = harness.load_config(args.config)
    result, ok = harness.run_binning(cfg)
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "binning.csv"
    binning.write_sweep_csv(path, result)
    for subset, thr in result.finite_n_threshold.items():
        curve = result.curve(subset)
        print(f"{subset}: threshold={curve[0].theory_threshold:.4f} "
              f"crossing={binning.crossing_rate(curve):.4f} finite-N={thr:.4f}")
    print(f"clamp fraction {result.clamp_fraction:.2e} at A={result.A}")
    print(f"wrote {path}")
    return EXIT_OK if ok else EXIT_TOLERANCE


def _dump(args) -> int:
    cfg = harness.load_config(args.config)
    p = cfg.scheme
    x = codec.source_sequence(p.seed, args.trial, cfg.samples_per_trial, p.sigma_x2)
    enc = codec.encode(x, p, trial=args.trial)
    codec.dump_descriptions(args.out, enc.descriptions)
    print(f"wrote {len(enc.descriptions)} descriptions to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dsqmd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("theory", help="closed-form rates and distortions")
    tables = {
        "rdf": "K-or-L rate from (--sx2 --dk --dl --k --l)",
        "ppr": "PPR distortions and rate from (--sv2 --rho --k --l)",
        "dsq": "DSQ distortions for every subset size from (--se2 --delta --l)",
        "map": "DSQ to PPR parameter map from (--se2 --delta --l)",
        "rb": "binning rate of the Nyquist-rate scheme from (--se2 --delta --l --k)",
        "solve": "delta and sigma_E2 reaching (--dk --dl) at (--k --l)",
    }
    for flag, text in tables.items():
        t.add_argument(f"--{flag}", action="store_true", help=text)
    t.add_argument("--sx2", type=float, default=1.0, help="source variance (default 1)")
    t.add_argument("--dk", type=float, help="side distortion")
    t.add_argument("--dl", type=float, help="central distortion")
    t.add_argument("--k", type=int, help="side subset size")
    t.add_argument("--l", type=int, help="number of descriptions")
    t.add_argument("--sv2", type=float, help="PPR noise variance")
    t.add_argument("--rho", type=float, help="PPR noise correlation")
    t.add_argument("--se2", type=float, help="quantizer noise variance sigma_E2")
    t.add_argument("--delta", type=float, help="noise-shaping level, >= 1")
    t.add_argument("--G", type=float, help="quantizer second moment for --rb (default 1/12)")
    t.set_defaults(func=_theory)

    for name, func, hlp in (("simulate", _simulate, "MSE and rate over description subsets"),
                            ("sweep", _sweep, "side/central trade-off over delta or sigma_E2"),
                            ("binning", _binning, "binning error rate against rate")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("config")
        s.add_argument("--out", help="output directory (overrides [run] output)")
        s.set_defaults(func=func)

    d = sub.add_parser("dump-descriptions", help="encode one trial and write its descriptions")
    d.add_argument("config")
    d.add_argument("--out", required=True)
    d.add_argument("--trial", type=int, default=0)
    d.set_defaults(func=_dump)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, theory.DomainError, codec.CodecError,
            binning.BinningConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
