"""Charts, differential forms, exterior calculus and flows."""

from .charts import Box, Chart, Grid, MappingTorus, Torus3, chart_from_dict
from .flows import (BatchFlow, LinearizedFlow, Termination, Trajectory, flow_batch,
                    flow_trajectory, linearized_flow)
from .forms import (BASIS, Form, SampledForm, VectorField, evaluate_on, exterior_derivative,
                    frobenius_residual, gluing_defect, interior_product, lie_derivative_oneform,
                    one_form, sampled_exterior_derivative, scalar, top_coefficient,
                    two_form_matrix, wedge)
from .integrate import dopri_batch

__all__ = [
    "BASIS", "BatchFlow", "Box", "Chart", "Form", "Grid", "LinearizedFlow", "MappingTorus",
    "SampledForm", "Termination", "Torus3", "Trajectory", "VectorField", "chart_from_dict",
    "dopri_batch", "evaluate_on", "exterior_derivative", "flow_batch", "flow_trajectory",
    "frobenius_residual", "gluing_defect", "interior_product", "lie_derivative_oneform",
    "linearized_flow", "one_form", "sampled_exterior_derivative", "scalar", "top_coefficient",
    "two_form_matrix", "wedge",
]
