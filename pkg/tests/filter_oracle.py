"""Truth-table oracle for the D11 receive filter, written independently of fwmon.chip.

Each frame class is gated by at most one maccontrol flag; the frame survives iff the
gate is absent or the flag is set.
"""

import itertools

from fwmon.dot11 import BROADCAST, CONTROL, DATA, MANAGEMENT, Dot11Frame

STA = bytes.fromhex("020000000001")
BSSID = bytes.fromhex("0200000000aa")
OTHER_BSS = bytes.fromhex("0211223344aa")
PEER = bytes.fromhex("02aabbccdd01")
STRANGER = bytes.fromhex("0266778899ee")
MULTICAST = bytes.fromhex("01005e000001")

FLAGS = ("promisc", "keepbadfcs", "keepcontrol", "bcns_promisc")

# class -> (frame, gating flag or None)
CLASSES = {
    "own_data": (Dot11Frame(DATA, "data", STA, BSSID, PEER, b"x"), None),
    "own_qos_data": (Dot11Frame(DATA, "qos_data", STA, BSSID, PEER, b"x"), None),
    "broadcast_data": (Dot11Frame(DATA, "data", BROADCAST, BSSID, PEER, b"x"), None),
    "multicast_data": (Dot11Frame(DATA, "data", MULTICAST, BSSID, PEER, b"x"), None),
    "foreign_data": (Dot11Frame(DATA, "data", STRANGER, OTHER_BSS, PEER, b"x"), "promisc"),
    "own_beacon": (Dot11Frame(MANAGEMENT, "beacon", BROADCAST, BSSID, BSSID), None),
    "own_probe_resp": (Dot11Frame(MANAGEMENT, "probe_response", STA, BSSID, BSSID), None),
    "foreign_beacon": (Dot11Frame(MANAGEMENT, "beacon", BROADCAST, OTHER_BSS, OTHER_BSS), "bcns_promisc"),
    "foreign_probe_resp": (Dot11Frame(MANAGEMENT, "probe_response", STA, OTHER_BSS, OTHER_BSS),
                           "bcns_promisc"),
    "ack": (Dot11Frame(CONTROL, "ack", STRANGER), "keepcontrol"),
    "ack_to_us": (Dot11Frame(CONTROL, "ack", STA), "keepcontrol"),
    "rts": (Dot11Frame(CONTROL, "rts", STRANGER, PEER), "keepcontrol"),
    "bad_fcs_own_data": (Dot11Frame(DATA, "data", STA, BSSID, PEER, b"x", fcs_ok=False), "keepbadfcs"),
    "bad_fcs_beacon": (Dot11Frame(MANAGEMENT, "beacon", BROADCAST, OTHER_BSS, OTHER_BSS, fcs_ok=False),
                       "keepbadfcs"),
}


def oracle_accept(cls: str, flags_set: frozenset) -> bool:
    gate = CLASSES[cls][1]
    return gate is None or gate in flags_set


def all_cases():
    """Every (class, flag subset) pair: 14 classes x 16 subsets."""
    subsets = [frozenset(c) for r in range(5) for c in itertools.combinations(FLAGS, r)]
    return [(cls, s) for cls in CLASSES for s in subsets]
