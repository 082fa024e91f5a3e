#!/usr/bin/env python3
"""Generate the bundled fixture maps.

Conflict zones are derived from the lane geometry: two routes conflict where
their centerlines come closer than CONFLICT_WIDTH while running on different
lanes. Diverging lanes (shared lane right before the close region) are not
conflicts. Close regions with the same pair of lanes are merged into one zone.

Usage: python3 tools/gen_maps.py crates/core/fixtures
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

CONFLICT_WIDTH = 2.6
ZONE_MARGIN = 1.0
SAMPLE_STEP = 0.1
EXIT_ALLOWANCE = 20.0


def line(p0, p1, step=5.0):
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    n = max(1, int(math.ceil(np.linalg.norm(p1 - p0) / step)))
    return [tuple(p0 + (p1 - p0) * k / n) for k in range(n + 1)]


def arc(center, radius, a0, a1, step=1.0):
    span = abs(a1 - a0) * radius
    n = max(2, int(math.ceil(span / step)))
    return [
        (center[0] + radius * math.cos(a0 + (a1 - a0) * k / n),
         center[1] + radius * math.sin(a0 + (a1 - a0) * k / n))
        for k in range(n + 1)
    ]


def bezier(p0, p1, p2, p3, n=16):
    pts = []
    for k in range(n + 1):
        t = k / n
        u = 1 - t
        x = u**3 * p0[0] + 3 * u * u * t * p1[0] + 3 * u * t * t * p2[0] + t**3 * p3[0]
        y = u**3 * p0[1] + 3 * u * u * t * p1[1] + 3 * u * t * t * p2[1] + t**3 * p3[1]
        pts.append((x, y))
    return pts


class MapBuilder:
    def __init__(self, kind):
        self.kind = kind
        self.lanes = {}
        self.order = []
        self.routes = []

    def lane(self, lane_id, points, speed):
        assert lane_id not in self.lanes, lane_id
        self.lanes[lane_id] = {"points": points, "speed": speed, "succ": []}
        self.order.append(lane_id)

    def route(self, route_id, lane_ids):
        for a, b in zip(lane_ids, lane_ids[1:]):
            if b not in self.lanes[a]["succ"]:
                self.lanes[a]["succ"].append(b)
            pa = self.lanes[a]["points"][-1]
            pb = self.lanes[b]["points"][0]
            assert math.dist(pa, pb) < 1e-6, (route_id, a, b, pa, pb)
        self.routes.append((route_id, lane_ids))

    # ---- sampling -------------------------------------------------------
    def sample_route(self, lane_ids):
        xs, ys, ss, lanes = [], [], [], []
        s0 = 0.0
        for lid in lane_ids:
            pts = np.asarray(self.lanes[lid]["points"], float)
            seg = np.diff(pts, axis=0)
            seglen = np.hypot(seg[:, 0], seg[:, 1])
            cum = np.concatenate([[0.0], np.cumsum(seglen)])
            length = cum[-1]
            n = max(2, int(math.ceil(length / SAMPLE_STEP)))
            for k in range(n):
                d = length * k / n
                i = min(np.searchsorted(cum, d, side="right") - 1, len(seglen) - 1)
                f = (d - cum[i]) / seglen[i]
                p = pts[i] + seg[i] * f
                xs.append(p[0])
                ys.append(p[1])
                ss.append(s0 + d)
                lanes.append(lid)
            s0 += length
        last = self.lanes[lane_ids[-1]]["points"][-1]
        xs.append(last[0])
        ys.append(last[1])
        ss.append(s0)
        lanes.append(lane_ids[-1])
        return np.array(xs), np.array(ys), np.array(ss), lanes, s0

    def lane_at(self, sample, s):
        _, _, ss, lanes, _ = sample
        i = int(np.clip(np.searchsorted(ss, s, side="right") - 1, 0, len(ss) - 1))
        return lanes[i]

    def heading_at(self, sample, s):
        xs, ys, ss, _, _ = sample
        i = int(np.clip(np.searchsorted(ss, s, side="right") - 1, 0, len(ss) - 2))
        return math.atan2(ys[i + 1] - ys[i], xs[i + 1] - xs[i])

    def intervals(self, sa, sb):
        """Close regions of route a w.r.t. route b on distinct lanes."""
        xa, ya, s_a, la, _ = sa
        xb, yb, s_b, lb, _ = sb
        dx = xa[:, None] - xb[None, :]
        dy = ya[:, None] - yb[None, :]
        d = np.hypot(dx, dy)
        nearest = np.argmin(d, axis=1)
        close = d[np.arange(len(xa)), nearest] < CONFLICT_WIDTH
        diff_lane = np.array([la[i] != lb[nearest[i]] for i in range(len(xa))])
        mask = close & diff_lane
        out = []
        i = 0
        n = len(mask)
        while i < n:
            if not mask[i]:
                i += 1
                continue
            j = i
            while j + 1 < n and mask[j + 1]:
                j += 1
            out.append((i, j, nearest[i:j + 1]))
            i = j + 1
        return out

    def build(self, precedence_fn, spawn_margin=15.0):
        samples = {rid: self.sample_route(lids) for rid, lids in self.routes}
        route_len = {rid: samples[rid][4] for rid, _ in self.routes}
        first_lane = {rid: lids[0] for rid, lids in self.routes}
        zones = {}
        ids = [rid for rid, _ in self.routes]
        for ia, ra in enumerate(ids):
            for rb in ids[ia + 1:]:
                if first_lane[ra] == first_lane[rb]:
                    continue
                sa, sb = samples[ra], samples[rb]
                b_runs = self.intervals(sb, sa)
                for i, j, near in self.intervals(sa, sb):
                    s_a0, s_a1 = sa[2][i], sa[2][j]
                    hit = [(bi, bj) for bi, bj, _ in b_runs
                           if np.any((near >= bi - 5) & (near <= bj + 5))]
                    if not hit:
                        continue
                    s_b0 = sb[2][min(h[0] for h in hit)]
                    s_b1 = sb[2][max(h[1] for h in hit)]
                    # diverging lanes share the lane right before the close region
                    if self.lane_at(sa, max(s_a0 - 1.0, 0.0)) == self.lane_at(sb, max(s_b0 - 1.0, 0.0)):
                        continue
                    lane_a = self.lane_at(sa, s_a0)
                    lane_b = self.lane_at(sb, s_b0)
                    key = tuple(sorted([lane_a, lane_b]))
                    z = zones.setdefault(key, {})
                    for rid, lo, hi in ((ra, s_a0, s_a1), (rb, s_b0, s_b1)):
                        lo = max(lo - ZONE_MARGIN, 0.0)
                        hi = min(hi + ZONE_MARGIN, route_len[rid])
                        if rid in z:
                            z[rid] = (min(z[rid][0], lo), max(z[rid][1], hi))
                        else:
                            z[rid] = (lo, hi)
        out_zones = []
        for n, key in enumerate(sorted(zones)):
            z = zones[key]
            approaches = sorted(z.items())
            prec = []
            for ia, (ra, (sa0, _)) in enumerate(approaches):
                for ib, (rb, (sb0, _)) in enumerate(approaches):
                    if ia == ib:
                        continue
                    la = self.lane_at(samples[ra], sa0)
                    lb = self.lane_at(samples[rb], sb0)
                    if la == lb:
                        continue
                    info_a = (ra, la, self.heading_at(samples[ra], sa0))
                    info_b = (rb, lb, self.heading_at(samples[rb], sb0))
                    if precedence_fn(info_a, info_b):
                        prec.append([ia, ib])
            out_zones.append({
                "id": f"z{n:02d}_{key[0]}__{key[1]}",
                "approaches": [
                    {"route_id": rid, "s_stop_m": round(lo, 3), "s_target_m": round(hi, 3)}
                    for rid, (lo, hi) in approaches
                ],
                "precedence": prec,
            })
        # every route must reach EXIT_ALLOWANCE beyond its last target line
        for rid in ids:
            last = max((a["s_target_m"] for z in out_zones for a in z["approaches"] if a["route_id"] == rid),
                       default=0.0)
            assert last + EXIT_ALLOWANCE + 5.0 < route_len[rid], (rid, last, route_len[rid])
        entries = []
        seen = set()
        for rid, lids in sorted(self.routes):
            if lids[0] in seen:
                continue
            seen.add(lids[0])
            stops = [a["s_stop_m"] for z in out_zones for a in z["approaches"]
                     if first_lane[a["route_id"]] == lids[0]]
            first_stop = min(stops)
            entries.append({
                "route_id": rid,
                "spawn_s_min_m": 5.0,
                "spawn_s_max_m": round(first_stop - spawn_margin, 3),
            })
        lanes = []
        for lid in self.order:
            lane = self.lanes[lid]
            lanes.append({
                "id": lid,
                "points": [[round(x, 4), round(y, 4)] for x, y in lane["points"]],
                "speed_limit_mps": lane["speed"],
                "successors": lane["succ"],
            })
        return {
            "map_version": 1,
            "scenario_kind": self.kind,
            "lanes": lanes,
            "routes": [{"id": rid, "lane_ids": lids} for rid, lids in self.routes],
            "conflict_zones": out_zones,
            "entries": entries,
        }


# ---------------------------------------------------------------------------
# four-arm intersection (straight + right turn per arm)

ARMS = {"S": (0.0, -1.0), "E": (1.0, 0.0), "N": (0.0, 1.0), "W": (-1.0, 0.0)}
RIGHT_OF = {"S": "E", "E": "N", "N": "W", "W": "S"}
OPPOSITE = {"S": "N", "N": "S", "E": "W", "W": "E"}


def intersection(kind, main_speed, side_speed, arm_len=125.0, box=5.0, off=1.75):
    mb = MapBuilder(kind)

    def inbound(arm):
        # travel direction towards the center, lane on the right-hand side
        ox, oy = ARMS[arm]
        dx, dy = -ox, -oy
        rx, ry = dy, -dx
        return (ox * arm_len + rx * off, oy * arm_len + ry * off), (ox * box + rx * off, oy * box + ry * off)

    def outbound(arm):
        ox, oy = ARMS[arm]
        dx, dy = ox, oy
        rx, ry = dy, -dx
        return (ox * box + rx * off, oy * box + ry * off), (ox * arm_len + rx * off, oy * arm_len + ry * off)

    def speed(arm):
        return main_speed if arm in ("E", "W") else side_speed

    for arm in ARMS:
        a, b = inbound(arm)
        mb.lane(f"in_{arm}", line(a, b), speed(arm))
    for arm in ARMS:
        a, b = outbound(arm)
        mb.lane(f"out_{arm}", line(a, b), speed(arm))
    for arm in ARMS:
        start = inbound(arm)[1]
        opp = OPPOSITE[arm]
        end = outbound(opp)[0]
        mb.lane(f"c_{arm}{opp}", line(start, end, step=1.0), speed(arm))
        rgt = RIGHT_OF[arm]
        end_r = outbound(rgt)[0]
        # quarter circle around the box corner between the two lanes
        cx = start[0] + (end_r[0] - start[0]) * (1 if ARMS[arm][0] == 0 else 0)
        cy = start[1] + (end_r[1] - start[1]) * (1 if ARMS[arm][1] == 0 else 0)
        center = (cx, cy)
        a0 = math.atan2(start[1] - cy, start[0] - cx)
        a1 = math.atan2(end_r[1] - cy, end_r[0] - cx)
        if a1 - a0 > math.pi:
            a1 -= 2 * math.pi
        if a0 - a1 > math.pi:
            a1 += 2 * math.pi
        radius = math.dist(start, center)
        pts = arc(center, radius, a0, a1, step=0.6)
        pts[0] = start
        pts[-1] = end_r
        mb.lane(f"c_{arm}{rgt}", pts, min(speed(arm), speed(rgt)))
    for arm in ARMS:
        opp = OPPOSITE[arm]
        rgt = RIGHT_OF[arm]
        mb.route(f"{arm}_straight", [f"in_{arm}", f"c_{arm}{opp}", f"out_{opp}"])
        mb.route(f"{arm}_right", [f"in_{arm}", f"c_{arm}{rgt}", f"out_{rgt}"])
    return mb


def main_road_precedence(a, b):
    # E-W is the main road; connector lane ids start with c_<from-arm>
    def is_main(lane):
        return lane.startswith("c_E") or lane.startswith("c_W") or lane in ("in_E", "in_W")
    return is_main(a[1]) and not is_main(b[1])


def right_before_left(a, b):
    # b yields to a when a approaches from b's right-hand side
    ha, hb = a[2], b[2]
    cross = math.cos(hb) * math.sin(ha) - math.sin(hb) * math.cos(ha)
    return cross > 1e-6


# ---------------------------------------------------------------------------
# roundabout, counter-clockwise circulation

def roundabout(radius=16.0, arm_len=110.0, off=1.75, ring_speed=8.33, arm_speed=13.89, node_deg=20.0):
    mb = MapBuilder("roundabout")
    arms = ["S", "E", "N", "W"]
    theta = {"S": -90.0, "E": 0.0, "N": 90.0, "W": 180.0}

    def ring_pt(deg):
        r = math.radians(deg)
        return (radius * math.cos(r), radius * math.sin(r))

    def ring_tan(deg):
        r = math.radians(deg)
        return (-math.sin(r), math.cos(r))

    join = radius + 11.0
    for arm in arms:
        ox, oy = ARMS[arm]
        dx, dy = -ox, -oy
        rx, ry = dy, -dx
        far = (ox * arm_len + rx * off, oy * arm_len + ry * off)
        near = (ox * join + rx * off, oy * join + ry * off)
        mb.lane(f"in_{arm}", line(far, near), arm_speed)
        p3 = ring_pt(theta[arm] + node_deg)
        t3 = ring_tan(theta[arm] + node_deg)
        p1 = (near[0] + dx * 4.0, near[1] + dy * 4.0)
        p2 = (p3[0] - t3[0] * 4.0, p3[1] - t3[1] * 4.0)
        mb.lane(f"entry_{arm}", bezier(near, p1, p2, p3), ring_speed)
        # exit
        sx, sy = ox, oy
        rx2, ry2 = sy, -sx
        near_o = (ox * join + rx2 * off, oy * join + ry2 * off)
        far_o = (ox * arm_len + rx2 * off, oy * arm_len + ry2 * off)
        p0 = ring_pt(theta[arm] - node_deg)
        t0 = ring_tan(theta[arm] - node_deg)
        q1 = (p0[0] + t0[0] * 4.0, p0[1] + t0[1] * 4.0)
        q2 = (near_o[0] - sx * 4.0, near_o[1] - sy * 4.0)
        mb.lane(f"exit_{arm}", bezier(p0, q1, q2, near_o), ring_speed)
        mb.lane(f"out_{arm}", line(near_o, far_o), arm_speed)
    # ring segments: post_<arm> from entry node of arm to exit node of the next arm,
    # pre_<arm> from exit node of arm to its entry node
    for k, arm in enumerate(arms):
        nxt = arms[(k + 1) % 4]
        a0 = theta[arm] + node_deg
        a1 = theta[nxt] - node_deg
        if a1 < a0:
            a1 += 360.0
        pts = arc((0.0, 0.0), radius, math.radians(a0), math.radians(a1), step=1.0)
        mb.lane(f"ring_post_{arm}", pts, ring_speed)
        b0 = theta[nxt] - node_deg
        b1 = theta[nxt] + node_deg
        pts = arc((0.0, 0.0), radius, math.radians(b0), math.radians(b1), step=1.0)
        mb.lane(f"ring_pre_{nxt}", pts, ring_speed)
    for k, arm in enumerate(arms):
        for n_exit in (1, 2, 3):
            lanes = [f"in_{arm}", f"entry_{arm}"]
            for step in range(n_exit):
                cur = arms[(k + step) % 4]
                nxt = arms[(k + step + 1) % 4]
                lanes.append(f"ring_post_{cur}")
                if step + 1 < n_exit:
                    lanes.append(f"ring_pre_{nxt}")
            lanes += [f"exit_{arms[(k + n_exit) % 4]}", f"out_{arms[(k + n_exit) % 4]}"]
            mb.route(f"{arm}_exit{n_exit}", lanes)
    return mb


def circulating_first(a, b):
    return a[1].startswith("ring_") and not b[1].startswith("ring_")


# ---------------------------------------------------------------------------
# road narrowing, single shared lane in the middle

def narrowing(half=140.0, narrow=18.0, taper=12.0, off=1.75, speed=13.89):
    mb = MapBuilder("narrowing")
    x0 = -half
    x1 = -(narrow + taper)
    x2 = -narrow
    mb.lane("in_W", line((x0, -off), (x1, -off)), speed)
    mb.lane("taper_in_W", line((x1, -off), (x2, 0.0), step=1.0), speed)
    mb.lane("narrow_WE", line((x2, 0.0), (-x2, 0.0), step=2.0), speed)
    mb.lane("taper_out_E", line((-x2, 0.0), (-x1, -off), step=1.0), speed)
    mb.lane("out_E", line((-x1, -off), (-x0, -off)), speed)
    mb.lane("in_E", line((-x0, off), (-x1, off)), speed)
    mb.lane("taper_in_E", line((-x1, off), (-x2, 0.0), step=1.0), speed)
    mb.lane("narrow_EW", line((-x2, 0.0), (x2, 0.0), step=2.0), speed)
    mb.lane("taper_out_W", line((x2, 0.0), (x1, off), step=1.0), speed)
    mb.lane("out_W", line((x1, off), (x0, off)), speed)
    mb.route("W_through", ["in_W", "taper_in_W", "narrow_WE", "taper_out_E", "out_E"])
    mb.route("E_through", ["in_E", "taper_in_E", "narrow_EW", "taper_out_W", "out_W"])
    return mb


def westbound_yields(a, b):
    return a[0].startswith("W_") and b[0].startswith("E_")


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/fixtures")
    out.mkdir(parents=True, exist_ok=True)
    maps = {
        "main_road_4arm": intersection("main_road_intersection", 13.89, 13.89).build(main_road_precedence),
        "right_before_left_4arm": intersection("right_before_left", 8.33, 8.33).build(right_before_left),
        "roundabout_4arm": roundabout().build(circulating_first),
        "narrowing": narrowing().build(westbound_yields),
    }
    for name, doc in maps.items():
        path = out / f"{name}.json"
        path.write_text(json.dumps(doc, indent=1) + "\n")
        nz = len(doc["conflict_zones"])
        print(f"{name}: {len(doc['lanes'])} lanes, {len(doc['routes'])} routes, {nz} zones")
        for z in doc["conflict_zones"]:
            aps = ", ".join(f"{a['route_id']}[{a['s_stop_m']:.1f},{a['s_target_m']:.1f}]" for a in z["approaches"])
            print(f"   {z['id']}: {aps} prec={z['precedence']}")


if __name__ == "__main__":
    main()
