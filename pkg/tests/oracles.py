"""Independent reference implementations used only by the tests."""

from fractions import Fraction


def brute_force_ap(scores, positives):
    """Exact all-point AP from the PR curve, in rational arithmetic.

    Builds every (recall, precision) operating point by walking the ranking
    (descending score, ties in input order), then for each recall level takes
    the best precision at that recall or higher and sums the rectangle areas.
    """
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    npos = sum(1 for p in positives if p)
    points = []
    tp = 0
    for rank, i in enumerate(order, start=1):
        if positives[i]:
            tp += 1
        points.append((Fraction(tp, npos), Fraction(tp, rank)))
    # best precision at this recall or any higher recall, scanning from the end
    best = [Fraction(0)] * len(points)
    running = Fraction(0)
    for j in range(len(points) - 1, -1, -1):
        running = max(running, points[j][1])
        best[j] = running
    area = Fraction(0)
    prev_recall = Fraction(0)
    for j, (recall, _) in enumerate(points):
        if recall == prev_recall:
            continue
        area += (recall - prev_recall) * best[j]
        prev_recall = recall
    return area
