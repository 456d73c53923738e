"""Command line entry point: ``slachain generate|verify|emulate|query``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .catalog import CatalogError, default_catalog, load_catalog
from .contract import ContractError, contract_from_json, contract_to_json, generate_contract
from .emulator import EmulationError, EmulatorConfig, run_emulation
from .ledger import LoadError, load, persist, verify_file
from .parser import SlaParseError, load_sla

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2


def _err(*lines):
    for line in lines:
        print(line, file=sys.stderr)


def cmd_generate(args) -> int:
    try:
        catalog = load_catalog(args.catalog) if args.catalog else default_catalog()
        sla = load_sla(args.sla, catalog)
        contract = generate_contract(sla, catalog)
    except (SlaParseError, ContractError) as exc:
        _err(f"{args.sla}: {len(exc.issues)} issue(s)", *(f"  {issue}" for issue in exc.issues))
        return EXIT_INVALID
    except (CatalogError, OSError) as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "contract.json").write_text(contract_to_json(contract))
    (out / "docs.txt").write_text(contract.docs)
    (out / "listing.txt").write_text(contract.listing)
    print(f"{len(contract.methods)} methods -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if not Path(args.ledger).is_file():
        _err(f"error: no such file {args.ledger}")
        return EXIT_INVALID
    report = verify_file(args.ledger)
    if report.ok:
        ledger = load(args.ledger)
        print(f"ok: {len(ledger.blocks)} blocks, tip {ledger.tip.block_hash.hex()}")
        return EXIT_OK
    where = "world state" if report.first_bad_height is None else f"height {report.first_bad_height}"
    print(f"FAILED at {where}: {report.detail}")
    return EXIT_FAILED


def cmd_emulate(args) -> int:
    try:
        config = EmulatorConfig(
            counts={"sensor": args.sensors, "gateway": args.gateways, "ingest": args.ingest,
                    "rt_analytics": args.rt, "storage": args.storage},
            violation_ratio=args.ratio,
            iterations=args.iterations,
            seed=args.seed,
            sla_path=args.sla,
            catalog_path=args.catalog,
            floor_one_per_layer=args.floor_one_per_layer,
            concurrent=args.concurrent,
            block_cut_size=args.block_cut_size,
        )
        report = run_emulation(config)
    except (ValueError, EmulationError, SlaParseError, ContractError, CatalogError, OSError) as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    if args.output:
        Path(args.output).write_text(report.to_json())
    else:
        sys.stdout.write(report.to_json())
    if args.ledger:
        persist(report.ledger, args.ledger)
    print(f"transactions {report.transactions_performed}  injected {report.violations_injected}  "
          f"detected {report.violations_detected}  {'ok' if report.success else 'FAILED'}", file=sys.stderr)
    return EXIT_OK if report.success else EXIT_FAILED


def cmd_query(args) -> int:
    try:
        ledger = load(args.ledger)
    except (LoadError, OSError) as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    if args.contract:
        contract = contract_from_json(Path(args.contract).read_text())
    else:
        contract = ledger.deployed_contract()
        if contract is None:
            _err("error: ledger holds no deployed contract; pass --contract")
            return EXIT_INVALID
    call_args = [args.id] if args.target is None else [args.target, args.id]
    response = ledger.query(contract, args.method, call_args)
    print(response.payload)
    return EXIT_OK if response.ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slachain", description="SLA monitoring contracts on a simulated ledger")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="compile an SLA document into a monitoring contract")
    p.add_argument("sla")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--catalog", help="vocabulary catalog (default: bundled rpm-v1)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("verify", help="check block hashes and replayed world state of a ledger file")
    p.add_argument("ledger")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("emulate", help="run the IoT workload emulator")
    p.add_argument("--sla", help="SLA document (default: bundled RPM fixture)")
    p.add_argument("--catalog")
    p.add_argument("--sensors", type=int, default=2)
    p.add_argument("--gateways", type=int, default=1)
    p.add_argument("--ingest", type=int, default=1)
    p.add_argument("--rt", type=int, default=1)
    p.add_argument("--storage", type=int, default=1)
    p.add_argument("--ratio", default="0.05")
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--floor-one-per-layer", action="store_true")
    p.add_argument("--concurrent", action="store_true")
    p.add_argument("--block-cut-size", type=int, default=10)
    p.add_argument("-o", "--output", help="report file (default: stdout)")
    p.add_argument("--ledger", help="write the resulting ledger here")
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("query", help="run a read-only contract method against a ledger file")
    p.add_argument("--ledger", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--target", help="target name, for the history method")
    p.add_argument("--contract", help="contract descriptor (default: the one deployed on the ledger)")
    p.set_defaults(func=cmd_query)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
