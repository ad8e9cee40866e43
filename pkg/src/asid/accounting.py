"""Parameter and multiply-add budgets, per named submodule.

Counts are analytic: every module reports the MACs it executes itself
(``own_macs``) and the geometry each child sees (``child_geometry``). One
multiply-add is one unit; softmax, activations, norms, additions and
resampling are free by convention.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .layers import Module
from .network import ASID, ModelConfig

OUTPUT_720P = (1280, 720)


@dataclass
class CostNode:
    name: str
    params: int = 0
    macs: int = 0
    children: list["CostNode"] = field(default_factory=list)

    def walk(self, prefix: str = "", depth: int = 0):
        path = f"{prefix}.{self.name}" if prefix else self.name
        yield depth, path, self
        for c in self.children:
            yield from c.walk(path, depth + 1)

    def find(self, path: str) -> "CostNode":
        for _, p, node in self.walk():
            if p == path:
                return node
        raise KeyError(path)


@dataclass
class CostReport:
    root: CostNode
    geometry: tuple[int, int] | None = None  # output W x H the MACs refer to

    @property
    def params(self) -> int:
        return self.root.params

    @property
    def macs(self) -> int:
        return self.root.macs


def cost_tree(module: Module, h: int, w: int, name: str = "model") -> CostNode:
    """Recursive cost of ``module`` on an h x w input; parents are sums of children."""
    kids = [cost_tree(m, ch, cw, n) for n, m, ch, cw in module.child_geometry(h, w)]
    own_p, own_m = module.own_params(), module.own_macs(h, w)
    if kids and (own_p or own_m):
        kids.append(CostNode("ops", own_p, own_m))
    if not kids:
        return CostNode(name, own_p, own_m)
    return CostNode(name, sum(k.params for k in kids), sum(k.macs for k in kids), kids)


def lr_geometry(model: ASID, out_w: int, out_h: int) -> tuple[int, int]:
    """Padded LR (h, w) the body runs at for an out_w x out_h output."""
    s = model.config.scale
    return model.padded_size(-(-out_h // s), -(-out_w // s))


def count_params(model: Module) -> CostReport:
    return CostReport(cost_tree(model, 64, 64) if isinstance(model, ASID) else cost_tree(model, 1, 1))


def count_macs(model: ASID, out_w: int = OUTPUT_720P[0], out_h: int = OUTPUT_720P[1]) -> CostReport:
    h, w = lr_geometry(model, out_w, out_h)
    return CostReport(cost_tree(model, h, w), (out_w, out_h))


ABLATION_VARIANTS = {
    "baseline": dict(variant="baseline", share_mode="None"),
    "ID": dict(share_mode="None", channel_split=False),
    "ID+AS": dict(share_mode="InterGroup", channel_split=False),
    "ID+CS": dict(share_mode="None", channel_split=True),
    "ID+AS+CS": dict(share_mode="InterGroup", channel_split=True),
}
SHARING_VARIANTS = {
    "IntraGroup": dict(share_mode="IntraGroup"),
    "InterGroup": dict(share_mode="InterGroup"),
}


@dataclass(frozen=True)
class SweepRow:
    table: str
    variant: str
    params: int
    macs: int


def ablation_sweep(base: ModelConfig | None = None, out_w: int = OUTPUT_720P[0],
                   out_h: int = OUTPUT_720P[1]) -> list[SweepRow]:
    """Component ablation rows followed by the sharing-strategy rows (x2 unless ``base`` says otherwise)."""
    base = base or ModelConfig()
    rows = []
    for table, variants in (("components", ABLATION_VARIANTS), ("sharing", SHARING_VARIANTS)):
        for name, changes in variants.items():
            model = ASID(base.replace(**changes))
            rows.append(SweepRow(table, name, count_params(model).params, count_macs(model, out_w, out_h).macs))
    return rows


def sig(x: float, digits: int = 6) -> str:
    """Fixed six significant digits, trailing zeros kept so columns stay aligned."""
    return f"{x:#.{digits}g}".rstrip(".")


def human(n: float, unit: str = "") -> str:
    """Six significant digits with a K/M/G suffix."""
    for div, suffix in ((1e9, "G"), (1e6, "M"), (1e3, "K")):
        if abs(n) >= div:
            return sig(n / div) + suffix + unit
    return (str(int(n)) if float(n).is_integer() else sig(n)) + unit


def report_text(report: CostReport, max_depth: int | None = None) -> str:
    lines = []
    if report.geometry:
        lines.append(f"geometry {report.geometry[0]}x{report.geometry[1]} (output)")
    rows = [(d, p, n) for d, p, n in report.root.walk() if max_depth is None or d <= max_depth]
    width = max(len("  " * d + p.rsplit(".", 1)[-1]) for d, p, _ in rows)
    lines.append(f"{'module':<{width}}  {'params':>10}  {'macs':>10}  {'2xmacs':>10}")
    for d, path, node in rows:
        label = "  " * d + path.rsplit(".", 1)[-1]
        lines.append(f"{label:<{width}}  {human(node.params):>10}  {human(node.macs):>10}  {human(2 * node.macs):>10}")
    return "\n".join(lines) + "\n"


def report_csv(report: CostReport, max_depth: int | None = None) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["module", "depth", "params", "macs", "2xmacs"])
    for d, path, node in report.root.walk():
        if max_depth is None or d <= max_depth:
            out.writerow([path, d, node.params, node.macs, 2 * node.macs])
    return buf.getvalue()


def sweep_text(rows: list[SweepRow]) -> str:
    lines = []
    for table in dict.fromkeys(r.table for r in rows):
        lines.append(f"[{table}]")
        lines.append(f"{'variant':<12}  {'params':>10}  {'macs':>10}  {'2xmacs':>10}")
        for r in (r for r in rows if r.table == table):
            lines.append(f"{r.variant:<12}  {human(r.params):>10}  {human(r.macs):>10}  {human(2 * r.macs):>10}")
    return "\n".join(lines) + "\n"


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["table", "variant", "params", "macs", "2xmacs"])
    for r in rows:
        out.writerow([r.table, r.variant, r.params, r.macs, 2 * r.macs])
    return buf.getvalue()
