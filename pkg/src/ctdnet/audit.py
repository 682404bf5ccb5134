"""Parameter audits built from shape-only model graphs."""
from __future__ import annotations

import csv
import dataclasses
import io

from .errors import ConfigError
from .model import CTDNet, VariantConfig
from .nn.init import meta_init

# (reference total, relative tolerance) per variant
TARGETS = {"S": (1.7e6, 0.15), "M": (12.612e6, 0.10), "L": (26.48e6, 0.15)}


@dataclasses.dataclass
class AuditRow:
    module: str
    params: int
    cumulative: int


@dataclasses.dataclass
class AuditTable:
    variant: str
    rows: list
    target: float | None = None
    tolerance: float | None = None

    @property
    def total(self):
        return self.rows[-1].cumulative if self.rows else 0

    @property
    def relative_error(self):
        return None if self.target is None else (self.total - self.target) / self.target

    @property
    def passed(self):
        return self.target is None or abs(self.relative_error) <= self.tolerance

    def params_of(self, module):
        for row in self.rows:
            if row.module == module:
                return row.params
        raise KeyError(module)

    def to_text(self):
        width = max(len(r.module) for r in self.rows)
        lines = [f"{'module':<{width}}  {'params':>12}  {'cumulative':>12}"]
        lines += [f"{r.module:<{width}}  {r.params:>12,d}  {r.cumulative:>12,d}" for r in self.rows]
        lines.append(f"{'total':<{width}}  {self.total:>12,d}  ({self.total / 1e6:.3f}M)")
        if self.target is not None:
            verdict = "PASS" if self.passed else "FAIL"
            lines.append(
                f"{verdict} CTD-{self.variant}: {self.total / 1e6:.3f}M vs target "
                f"{self.target / 1e6:.3f}M ({self.relative_error:+.1%}, tolerance "
                f"±{self.tolerance:.0%})"
            )
        return "\n".join(lines)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["module", "params", "cumulative"])
        for r in self.rows:
            writer.writerow([r.module, r.params, r.cumulative])
        return buf.getvalue()


def build_structural(variant):
    with meta_init():
        return CTDNet(variant)


def structural_audit(variant):
    """Per-module parameter counts and running totals for a variant.

    ``variant`` is a :class:`VariantConfig` or one of "S", "M", "L".
    """
    if isinstance(variant, str):
        if variant not in TARGETS:
            raise ConfigError(f"unknown variant {variant!r}; expected S, M or L")
        variant = VariantConfig.preset(variant)
    model = build_structural(variant)
    rows, running = [], 0
    for name, child in model.named_children():
        if name == "backbone":
            name = f"backbone ({variant.backbone.kind})"
        n = child.count_parameters()
        running += n
        rows.append(AuditRow(name, n, running))
    target, tol = TARGETS.get(variant.name, (None, None))
    return AuditTable(variant.name, rows, target, tol)


def without_sap(variant):
    """The same variant with every SAP block (and its wide projection) removed."""
    return dataclasses.replace(variant, name="custom", sap_enabled=False, extra_e3_sap=False)
