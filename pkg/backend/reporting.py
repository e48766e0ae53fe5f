"""
Plain-text summaries printed by the command line
"""

import logging
from typing import Dict, Optional

import pandas as pd
from jinja2 import Template

from backend.feasibility import FeasibilityEnvelope, FeeReport, FeeVerification
from backend.market import AcceptanceReport, PriceVector, ShapleyTable, ValidationReport
from backend.solver import EquilibriumReport

logger = logging.getLogger(__name__)


def _template(text: str) -> Template:
    return Template(text.strip("\n") + "\n", trim_blocks=True, lstrip_blocks=True)


TEMPLATES: Dict[str, Template] = {
    "prices": _template("""
{% for buyer, model, price in buyer_prices %}
p_B[{{ buyer }}->{{ model }}] = {{ '%.6f' | format(price) }}
{% endfor %}
{% for dataset, model, price in data_prices %}
p_D[{{ dataset }}->{{ model }}] = {{ '%.6f' | format(price) }}
{% endfor %}
"""),
    "solve": _template("""
instance: {{ report.instance_id }}
schedule: {{ report.schedule.value }}
converged: {{ 'yes' if report.converged else 'no' }}
iterations: {{ report.iterations }}
final_residual: {{ '%.3e' | format(report.final_residual) }}
{{ prices }}
success_rate = {{ '%.6f' | format(report.acceptance.success_rate) }}
triple_win: {{ 'yes' if report.acceptance.triple_win else 'no' }}
"""),
    "baseline": _template("""
method: {{ method }}
{{ prices }}
success_rate = {{ '%.6f' | format(acceptance.success_rate) }}
triple_win: {{ 'yes' if acceptance.triple_win else 'no' }}
"""),
    "fee": _template("""
alpha_star = {{ '%.6f' | format(fee.alpha_star) }}
tau_star = {{ '%.6f' | format(fee.tau_star) }}
binding_model = {{ fee.binding_model }}
{% if fee.clamped %}
note: zero fee already prices some buyer out; tau_star clamps at 0
{% endif %}
{% if verification %}
binding_price = {{ '%.10f' | format(verification.binding_price) }} (min reserve {{ '%.10f' | format(verification.binding_min_reserve) }})
infeasible_above = {{ 'yes' if verification.infeasible_above else 'no' }}
{% endif %}
"""),
    "envelope": _template("""
{{ y_axis }} max vs {{ x_axis }} ({{ fixed }})
{% for p in points %}
{{ x_axis }}={{ '%.6g' | format(p.x) }}  analytic={{ '%.6f' | format(p.analytic) }}{% if p.numeric == p.numeric %}  numeric={{ '%.6f' | format(p.numeric) }}{% endif %}  [{{ p.status.value }}{% if p.binding_model %}; binding {{ p.binding_buyer }}->{{ p.binding_model }}{% endif %}]
{% endfor %}
"""),
    "shapley": _template("""
{% for model, column in shares.items() %}
{% for dataset, value in column.items() %}
SV[{{ dataset }}|{{ model }}] = {{ '%.6f' | format(value) }}
{% endfor %}
{% endfor %}
"""),
    "validation": _template("""
{% if report.passed %}
validation: pass
{% else %}
validation: {{ report.violations | length }} violation(s)
{% for v in report.violations %}
  {{ v }}
{% endfor %}
{% endif %}
"""),
    "experiment": _template("""
experiment: {{ name }}
{{ table }}
{% if path %}
written: {{ path }}
{% endif %}
"""),
}


def render_prices(prices: PriceVector) -> str:
    return TEMPLATES["prices"].render(
        buyer_prices=[(b, m, p) for (b, m), p in zip(prices.buyer_keys, prices.buyer_prices)],
        data_prices=[(d, m, p) for (d, m), p in zip(prices.data_keys, prices.data_prices)],
    ).rstrip("\n")


def render_solve(report: EquilibriumReport) -> str:
    return TEMPLATES["solve"].render(report=report, prices=render_prices(report.prices))


def render_baseline(method: str, prices: PriceVector, acceptance: AcceptanceReport) -> str:
    return TEMPLATES["baseline"].render(method=method, prices=render_prices(prices), acceptance=acceptance)


def render_fee(fee: FeeReport, verification: Optional[FeeVerification] = None) -> str:
    return TEMPLATES["fee"].render(fee=fee, verification=verification)


def render_envelope(envelope: FeasibilityEnvelope) -> str:
    fixed = ", ".join(f"{axis.value}={value:g}" for axis, value in envelope.fixed.items())
    return TEMPLATES["envelope"].render(
        x_axis=envelope.x_axis.value, y_axis=envelope.y_axis.value, fixed=fixed, points=envelope.points,
    )


def render_shapley(table: ShapleyTable) -> str:
    return TEMPLATES["shapley"].render(shares=table.to_dict())


def render_validation(report: ValidationReport) -> str:
    return TEMPLATES["validation"].render(report=report)


def render_experiment(name: str, table: pd.DataFrame, path: Optional[str] = None) -> str:
    return TEMPLATES["experiment"].render(name=name, table=table.to_string(index=False), path=path)
