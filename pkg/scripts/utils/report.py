"""
Print a console report from a selection, r-value or replication artifact
"""
import argparse
import os
import sys

sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from hetsel.artifacts import parse_extended, read_json


def _fmt(value, spec=".4f"):
    value = parse_extended(value)
    return format(value, spec)


def replication_lines(doc):
    design = doc["design"]
    lines = [
        "📊 REPLICATION REPORT",
        "=" * 60,
        f"Design: {design['design']}  reps={design['reps']}  alpha={design['alpha']}  mu0={design['mu0']}",
        f"Tool version: {doc['tool_version']}",
        "",
        f"{'Method':<8}{'FDR':>10}{'mFDR':>10}{'ETP':>14}{'ETP*':>14}",
    ]
    for name, stats in doc["methods"].items():
        mean = stats["mean"]
        lines.append(f"{name:<8}{_fmt(mean['fdp']):>10}{_fmt(stats['mfdr']):>10}"
                     f"{_fmt(mean['etp'], '.2f'):>14}{_fmt(mean['etp_star'], '.2f'):>14}")
    thresholds = doc["oracle_thresholds"]
    lines += [
        "",
        f"🎯 Oracle thresholds: t1={_fmt(thresholds['t1'])} t2={_fmt(thresholds['t2'])}",
        f"   Clfdr MSE (estimated vs exact): {_fmt(doc['clfdr_mse'], '.3e')}",
        "=" * 60,
    ]
    return lines


def selection_lines(doc):
    lines = [
        "📊 SELECTION REPORT",
        "=" * 60,
        f"Units: {doc['n_units']}  alpha={doc['alpha']}  mu0={doc['mu0']}",
        "",
        f"{'Method':<10}{'Number rejected':>20}{'Modified power':>20}",
    ]
    for name, stats in doc["methods"].items():
        lines.append(f"{name:<10}{stats['number_rejected']:>20}{_fmt(stats['modified_power']):>20}")
    lines.append("=" * 60)
    return lines


def rvalue_lines(doc):
    units = doc["units"]
    ranked = [u for u in units if u["r_prime"] is not None]
    ranked.sort(key=lambda u: u["r_prime"])
    lines = [
        f"🏁 R-VALUE REPORT ({doc['definition']})",
        "=" * 60,
        f"Grid points: {doc['grid_points']}  resolution: {_fmt(doc['grid_resolution'], '.3e')}",
        f"Ranked units: {len(ranked)} of {len(units)}",
        "",
        "Top 10:",
    ]
    for u in ranked[:10]:
        lines.append(f"   {str(u['id']):<16} x={u['x']:>10.4f}  r={_fmt(u['r'], '.4g'):>10}  r'={u['r_prime']:.4f}")
    lines.append("=" * 60)
    return lines


RENDERERS = {
    "replication_report": replication_lines,
    "selection_summary": selection_lines,
    "rvalues": rvalue_lines,
}


def render(path):
    doc = read_json(path)
    try:
        renderer = RENDERERS[doc["kind"]]
    except KeyError:
        raise ValueError(f"{path}: no report for artifact kind {doc.get('kind')!r}")
    return "\n".join(renderer(doc))


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description='Print a report from a JSON artifact')
    parser.add_argument('artifact', help='report.json, summary.json or rvalues.json')
    args = parser.parse_args()
    print(render(args.artifact))
