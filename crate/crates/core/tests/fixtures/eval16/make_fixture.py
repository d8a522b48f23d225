"""Regenerates pred.png, truth.png and report.json for the 16x16 eval fixture.

Metrics are computed by direct pixel counting, independently of the Rust
implementation. PNGs hold 16-bit panoptic codes (class * 1000 + instance);
class 255 marks ignored truth pixels.
"""

import json
import random
import struct
import zlib
from pathlib import Path

W = H = 16
IGNORE = 255
HERE = Path(__file__).parent


def png16(values):
    raw = b"".join(
        b"\x00" + b"".join(struct.pack(">H", values[y * W + x]) for x in range(W))
        for y in range(H)
    )

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body))

    header = struct.pack(">IIBBBBB", W, H, 16, 0, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", header)
        + chunk(b"IDAT", zlib.compress(raw))
        + chunk(b"IEND", b"")
    )


def make_maps(rng):
    truth = []
    for y in range(H):
        for x in range(W):
            if x < 8 and y < 8:
                seg = (1, 0)
            elif x >= 8 and y < 8:
                seg = (2, 1) if x < 12 else (2, 2)
            elif x < 10:
                seg = (3, 0)
            else:
                seg = (4, 1)
            truth.append(seg)
    for p in rng.sample(range(W * H), 12):
        truth[p] = (IGNORE, 0)
    pred = [(1, 0) if c == IGNORE else (c, i) for c, i in truth]
    # class 1 bleeds into class 3, instance 2 of class 2 is split, a spurious
    # class-4 blob sits inside class 3, class 2 instance 1 is relabeled
    for y in range(8, 11):
        for x in range(0, 6):
            pred[y * W + x] = (1, 0)
    for y in range(0, 4):
        for x in range(12, 16):
            pred[y * W + x] = (2, 3)
    for y in range(12, 15):
        for x in range(2, 5):
            pred[y * W + x] = (4, 7)
    for y in range(4, 8):
        for x in range(8, 12):
            pred[y * W + x] = (5, 0)
    return pred, truth


def evaluate(pred, truth):
    n = W * H
    valid = [truth[p][0] != IGNORE for p in range(n)]

    classes = sorted({c for p in range(n) if valid[p] for c in (pred[p][0], truth[p][0])})
    per_iou = {}
    for c in classes:
        inter = sum(1 for p in range(n) if valid[p] and pred[p][0] == c and truth[p][0] == c)
        union = sum(1 for p in range(n) if valid[p] and (pred[p][0] == c or truth[p][0] == c))
        per_iou[c] = inter / union
    total = 0.0
    for c in classes:
        total += per_iou[c]
    miou = total / len(classes) if classes else 0.0

    pred_segs = sorted(set(pred))
    truth_segs = sorted({truth[p] for p in range(n) if valid[p]})
    counts = {}
    for c in sorted({s[0] for s in pred_segs} | {s[0] for s in truth_segs}):
        tp = fp = fn = 0
        iou_sum = 0.0
        matched_pred, matched_truth = set(), set()
        for ps in (s for s in pred_segs if s[0] == c):
            for ts in (s for s in truth_segs if s[0] == c):
                inter = sum(1 for p in range(n) if pred[p] == ps and valid[p] and truth[p] == ts)
                if inter == 0:
                    continue
                union = sum(
                    1 for p in range(n) if valid[p] and (pred[p] == ps or truth[p] == ts)
                )
                iou = inter / union
                if iou > 0.5:
                    tp += 1
                    iou_sum += iou
                    matched_pred.add(ps)
                    matched_truth.add(ts)
        fn = sum(1 for ts in truth_segs if ts[0] == c and ts not in matched_truth)
        for ps in (s for s in pred_segs if s[0] == c and s not in matched_pred):
            area = sum(1 for p in range(n) if pred[p] == ps)
            void = sum(1 for p in range(n) if pred[p] == ps and not valid[p])
            if void / area <= 0.5:
                fp += 1
        if tp + fp + fn > 0:
            counts[c] = (tp, fp, fn, iou_sum)

    def ratios(tp, fp, fn, iou_sum):
        sq = iou_sum / tp if tp > 0 else 0.0
        denom = tp + 0.5 * fp + 0.5 * fn
        rq = tp / denom if denom > 0 else 0.0
        return sq * rq, sq, rq

    pooled = [0, 0, 0, 0.0]
    for c in sorted(counts):
        tp, fp, fn, s = counts[c]
        pooled = [pooled[0] + tp, pooled[1] + fp, pooled[2] + fn, pooled[3] + s]
    pq, sq, rq = ratios(*pooled)

    per_class = []
    for c in sorted(set(per_iou) | set(counts)):
        row = {"class": c, "iou": per_iou.get(c)}
        if c in counts:
            tp, fp, fn, s = counts[c]
            cpq, csq, crq = ratios(tp, fp, fn, s)
        else:
            tp = fp = fn = 0
            cpq = csq = crq = None
        row.update({"pq": cpq, "sq": csq, "rq": crq, "tp": tp, "fp": fp, "fn": fn})
        per_class.append(row)
    return {
        "miou": miou,
        "panoptic": {"pq": pq, "sq": sq, "rq": rq, "tp": pooled[0], "fp": pooled[1], "fn": pooled[2]},
        "per_class": per_class,
    }


def main():
    pred, truth = make_maps(random.Random(16))
    code = lambda s: s[0] * 1000 + s[1]
    (HERE / "pred.png").write_bytes(png16([code(s) for s in pred]))
    (HERE / "truth.png").write_bytes(png16([IGNORE if s[0] == IGNORE else code(s) for s in truth]))
    report = evaluate(pred, truth)
    (HERE / "report.json").write_text(json.dumps(report, indent=2) + "\n")


if __name__ == "__main__":
    main()
