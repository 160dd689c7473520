"""Joint dynamic pricing and SCMA radio-resource allocation for IoT networks."""

from .scenario import (Scenario, ScenarioConfig, Topology, CodebookMap, ChannelState,
                       EconomicConstants, build_codebook_map, generate_scenario,
                       load_scenario, validate_scenario)
from .link import (Allocation, PriceVector, ConstraintReport, check_constraints,
                   downlink_sinr, uplink_sinr, rate, evaluate_links)
from .economics import PlayerRevenues, total_revenues, service_quality
from .blocks import InfeasibleError, Scalarization
from .orchestrator import (RunOptions, RunReport, run_approach, run_weight_one, run_max_min,
                           run_conventional, alternating_loop, initial_allocation)
from .evaluation import jain_index, complexity_delta, complexity_table, sweep_lmax

__version__ = "0.1.0"
