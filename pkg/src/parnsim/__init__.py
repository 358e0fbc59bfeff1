"""parnsim: slotted-time network simulator and algorithm library.

Back-pressure and M-back-pressure baselines over per-destination queues,
shadow-queue adaptive routing (PARN) with probabilistic-splitting or
token-bucket routing tables over per-next-hop FIFO queues, and an XOR
network-coding extension with per-previous-hop queues and broadcast links.
"""

from .harness import (RunReport, SimConfig, SlotMetrics, build_engine, export,
                      load_report, run_experiment, run_single, run_slot,
                      stability_oracle)
from .topology import (BroadcastLink, InterferenceModel, Link, Schedule,
                       Topology, TopologyError, build_topology, conflict_sets,
                       extra_activation, greedy_maximal_schedule,
                       load_topology, max_weight_schedule_oracle)
from .traffic import (ArrivalBatch, DestinationPMF, Flow, Packet,
                      TrafficSource, degree_pmf, flows_from_pmf,
                      generate_arrivals)

__version__ = "0.1.0"

__all__ = [
    "ArrivalBatch", "BroadcastLink", "DestinationPMF", "Flow",
    "InterferenceModel", "Link", "Packet", "RunReport", "Schedule",
    "SimConfig", "SlotMetrics", "Topology", "TopologyError", "TrafficSource",
    "build_engine", "build_topology", "conflict_sets", "degree_pmf", "export",
    "extra_activation", "flows_from_pmf", "generate_arrivals", "load_report",
    "load_topology", "greedy_maximal_schedule", "max_weight_schedule_oracle",
    "run_experiment", "run_single", "run_slot", "stability_oracle",
]
