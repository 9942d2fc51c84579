"""Routing between benchmark cells."""
import logging

from app.graph.state import BenchGraphState

logger = logging.getLogger(__name__)


def route_after_score(state: BenchGraphState) -> str:
    """
    Route after a cell has been scored.

    Returns:
        "next_cell" while noise levels remain
        "build_table" once every level is scored
    """
    remaining = len(state["grid"]) - state["cell_index"]
    if remaining > 0:
        logger.debug(f"[GRAPH] {remaining} cell(s) left, routing to simulateCell")
        return "next_cell"
    logger.debug("[GRAPH] All cells scored, routing to buildTable")
    return "build_table"
