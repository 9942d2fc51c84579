"""LangGraph workflow definition - benchmark over a noise grid."""
import logging

from langgraph.graph import END, StateGraph

from app.graph.edges import route_after_score
from app.graph.nodes import buildTable, correctCell, prepareSequence, scoreCell, simulateCell
from app.graph.state import BenchGraphState
from app.models.request import BenchConfig
from app.models.response import BenchTable

logger = logging.getLogger(__name__)


def create_bench_graph():
    """Create the benchmark graph: one simulate/correct/score loop per noise level."""
    workflow = StateGraph(BenchGraphState)

    # Nodes
    workflow.add_node("prepareSequence", prepareSequence)
    workflow.add_node("simulateCell", simulateCell)
    workflow.add_node("correctCell", correctCell)
    workflow.add_node("scoreCell", scoreCell)
    workflow.add_node("buildTable", buildTable)

    # Entry
    workflow.set_entry_point("prepareSequence")

    # Per-cell flow
    workflow.add_edge("prepareSequence", "simulateCell")
    workflow.add_edge("simulateCell", "correctCell")
    workflow.add_edge("correctCell", "scoreCell")

    # Cell loop
    workflow.add_conditional_edges(
        "scoreCell",
        route_after_score,
        {"next_cell": "simulateCell", "build_table": "buildTable"},
    )

    # End
    workflow.add_edge("buildTable", END)

    return workflow.compile()


bench_graph = create_bench_graph()


def run_bench(cfg: BenchConfig) -> BenchTable:
    """Run every enabled method over the noise grid and return the marked table."""
    cells = len(cfg.noise_grid)
    logger.info(f"[GRAPH] Starting bench over {cells} noise level(s)")
    final_state = bench_graph.invoke(
        {"config": cfg, "rows": [], "cell_index": 0, "table": None, "model": None, "noise": None},
        config={"recursion_limit": 3 * cells + 10},
    )
    return final_state["table"]
