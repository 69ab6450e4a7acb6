"""Embedded transmission-grid topologies used by the builtin cases.

Each entry maps a case name to ``(n_bus, source_buses, edges)`` where
``edges`` is a tuple of ``(from_bus, to_bus)`` pairs over 1-based bus
numbers.  Source buses are the generator buses of the original AC test
system; every remaining bus hosts a load.  Parallel branches are kept as
separate edges.
"""

from __future__ import annotations

# WSCC 9-bus ring: three generators feeding a six-bus ring.
_IEEE9_EDGES = (
    (1, 4), (4, 5), (5, 7), (2, 7), (7, 8),
    (8, 9), (3, 9), (9, 6), (6, 4),
)

_IEEE14_EDGES = (
    (1, 2), (1, 5), (2, 3), (2, 4), (2, 5),
    (3, 4), (4, 5), (4, 7), (4, 9), (5, 6),
    (6, 11), (6, 12), (6, 13), (7, 8), (7, 9),
    (9, 10), (9, 14), (10, 11), (12, 13), (13, 14),
)

_IEEE30_EDGES = (
    (1, 2), (1, 3), (2, 4), (3, 4), (2, 5),
    (2, 6), (4, 6), (5, 7), (6, 7), (6, 8),
    (6, 9), (6, 10), (9, 11), (9, 10), (4, 12),
    (12, 13), (12, 14), (12, 15), (12, 16), (14, 15),
    (16, 17), (15, 18), (18, 19), (19, 20), (10, 20),
    (10, 17), (10, 21), (10, 22), (21, 22), (15, 23),
    (22, 24), (23, 24), (24, 25), (25, 26), (25, 27),
    (28, 27), (27, 29), (27, 30), (29, 30), (8, 28),
    (6, 28),
)

_IEEE39_EDGES = (
    (1, 2), (1, 39), (2, 3), (2, 25), (2, 30),
    (3, 4), (3, 18), (4, 5), (4, 14), (5, 6),
    (5, 8), (6, 7), (6, 11), (6, 31), (7, 8),
    (8, 9), (9, 39), (10, 11), (10, 13), (10, 32),
    (12, 11), (12, 13), (13, 14), (14, 15), (15, 16),
    (16, 17), (16, 19), (16, 21), (16, 24), (17, 18),
    (17, 27), (19, 20), (19, 33), (20, 34), (21, 22),
    (22, 23), (22, 35), (23, 24), (23, 36), (25, 26),
    (25, 37), (26, 27), (26, 28), (26, 29), (28, 29),
    (29, 38),
)

# 69-bus radial feeder: 26-branch trunk plus seven laterals.
_IEEE69_EDGES = (
    tuple((i, i + 1) for i in range(1, 27))
    + ((3, 28),) + tuple((i, i + 1) for i in range(28, 35))
    + ((3, 36),) + tuple((i, i + 1) for i in range(36, 46))
    + ((4, 47),) + tuple((i, i + 1) for i in range(47, 50))
    + ((8, 51), (51, 52))
    + ((9, 53),) + tuple((i, i + 1) for i in range(53, 65))
    + ((11, 66), (66, 67))
    + ((12, 68), (68, 69))
)

_IEEE118_EDGES = (
    (1, 2), (1, 3), (4, 5), (3, 5), (5, 6),
    (6, 7), (8, 9), (8, 5), (9, 10), (4, 11),
    (5, 11), (11, 12), (2, 12), (3, 12), (7, 12),
    (11, 13), (12, 14), (13, 15), (14, 15), (12, 16),
    (15, 17), (16, 17), (17, 18), (18, 19), (19, 20),
    (15, 19), (20, 21), (21, 22), (22, 23), (23, 24),
    (23, 25), (26, 25), (25, 27), (27, 28), (28, 29),
    (30, 17), (8, 30), (26, 30), (17, 31), (29, 31),
    (23, 32), (31, 32), (27, 32), (15, 33), (19, 34),
    (35, 36), (35, 37), (33, 37), (34, 36), (34, 37),
    (38, 37), (37, 39), (37, 40), (30, 38), (39, 40),
    (40, 41), (40, 42), (41, 42), (43, 44), (34, 43),
    (44, 45), (45, 46), (46, 47), (46, 48), (47, 49),
    (42, 49), (42, 49), (45, 49), (48, 49), (49, 50),
    (49, 51), (51, 52), (52, 53), (53, 54), (49, 54),
    (49, 54), (54, 55), (54, 56), (55, 56), (56, 57),
    (50, 57), (56, 58), (51, 58), (54, 59), (56, 59),
    (56, 59), (55, 59), (59, 60), (59, 61), (60, 61),
    (60, 62), (61, 62), (63, 59), (63, 64), (64, 61),
    (38, 65), (64, 65), (49, 66), (49, 66), (62, 66),
    (62, 67), (65, 66), (66, 67), (65, 68), (47, 69),
    (49, 69), (68, 69), (69, 70), (24, 70), (70, 71),
    (24, 72), (71, 72), (71, 73), (70, 74), (70, 75),
    (69, 75), (74, 75), (76, 77), (69, 77), (75, 77),
    (77, 78), (78, 79), (77, 80), (77, 80), (79, 80),
    (68, 81), (81, 80), (77, 82), (82, 83), (83, 84),
    (83, 85), (84, 85), (85, 86), (86, 87), (85, 88),
    (85, 89), (88, 89), (89, 90), (89, 90), (90, 91),
    (89, 92), (89, 92), (91, 92), (92, 93), (92, 94),
    (93, 94), (94, 95), (80, 96), (82, 96), (94, 96),
    (80, 97), (80, 98), (80, 99), (92, 100), (94, 100),
    (95, 96), (96, 97), (98, 100), (99, 100), (100, 101),
    (92, 102), (101, 102), (100, 103), (100, 104), (103, 104),
    (103, 105), (100, 106), (104, 105), (105, 106), (105, 107),
    (105, 108), (106, 107), (108, 109), (103, 110), (109, 110),
    (110, 111), (110, 112), (17, 113), (32, 113), (32, 114),
    (27, 115), (114, 115), (68, 116), (12, 117), (75, 118),
    (76, 118),
)

_IEEE118_SOURCES = (
    1, 4, 6, 8, 10, 12, 15, 18, 19, 24,
    25, 26, 27, 31, 32, 34, 36, 40, 42, 46,
    49, 54, 55, 56, 59, 61, 62, 65, 66, 69,
    70, 72, 73, 74, 76, 77, 80, 85, 87, 89,
    90, 91, 92, 99, 100, 103, 104, 105, 107, 110,
    111, 112, 113, 116,
)

TOPOLOGIES: dict[str, tuple[int, tuple[int, ...], tuple[tuple[int, int], ...]]] = {
    "ieee9": (9, (1, 2, 3), _IEEE9_EDGES),
    "ieee14": (14, (1, 2, 3, 6, 8), _IEEE14_EDGES),
    "ieee30": (30, (1, 2, 5, 8, 11, 13), _IEEE30_EDGES),
    "ieee39": (39, tuple(range(30, 40)), _IEEE39_EDGES),
    "ieee69": (69, (1,), _IEEE69_EDGES),
    "ieee118": (118, _IEEE118_SOURCES, _IEEE118_EDGES),
}
