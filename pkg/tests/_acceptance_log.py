"""One line per acceptance check, echoed in the pytest terminal summary."""

LINES = []


def record(label, ok, detail):
    line = f"{label}: {'PASS' if ok else 'FAIL'} ({detail})"
    LINES.append(line)
    print(line)
    return ok
