"""Monte Carlo null distributions for the composite Lilliefors (KS) and
Epps-Pulley statistics, and for Royston's normalized Shapiro-Francia z.

Each row of the output holds quantiles of the statistic under the null
hypothesis (i.i.d. normal samples, location and scale estimated with the
sample mean and the n-1 standard deviation) at the probability levels in
the header row.

    python3 gen_null_tables.py ../data [ks|ep|sf ...]
"""
import sys
import numpy as np
from scipy.special import ndtr, ndtri

KS_GRID = [5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 18, 20, 22, 25, 28, 32,
           36, 40, 45, 50, 56, 64, 72, 80, 90, 100, 128, 160, 200, 256, 320,
           400, 500, 640, 800, 1000]
SF_GRID = [5, 6, 7, 8, 9, 10, 12, 14, 16, 20, 24, 28, 32, 40, 48, 56, 64, 80,
           96, 128, 160, 200, 256, 320, 400, 500, 640, 800, 1000, 1500, 2000,
           3000, 5000]
EP_GRID = [8, 10, 12, 14, 16, 20, 24, 28, 32, 40, 48, 56, 64, 80, 96, 128,
           160, 200, 256]


def levels():
    body = np.round(np.arange(1, 500) * 0.002, 6)
    lower = [1e-4, 2.5e-4, 5e-4, 1e-3]
    upper = [0.999, 0.99925, 0.9995, 0.99975, 0.9999, 0.99995, 0.99999]
    return np.array(lower + list(body) + upper)


def studentize(x):
    return (x - x.mean(1, keepdims=True)) / x.std(1, ddof=1, keepdims=True)


def lilliefors(x):
    n = x.shape[1]
    z = ndtr(np.sort(studentize(x), 1))
    i = np.arange(1, n + 1)
    return np.maximum((i / n - z).max(1), (z - (i - 1) / n).max(1))


def epps_pulley(x):
    z = studentize(x)
    n = z.shape[1]
    out = np.empty(z.shape[0])
    for r in range(z.shape[0]):
        d = z[r][:, None] - z[r][None, :]
        out[r] = np.exp(-0.5 * d * d).sum() / n
    return out - np.sqrt(2.0) * np.exp(-0.25 * z * z).sum(1) + n / np.sqrt(3.0)


def epps_pulley_chunked(x):
    # vectorized over a block of rows to keep memory bounded
    z = studentize(x)
    n = z.shape[1]
    d = z[:, :, None] - z[:, None, :]
    s = np.exp(-0.5 * d * d).sum((1, 2)) / n
    return s - np.sqrt(2.0) * np.exp(-0.25 * z * z).sum(1) + n / np.sqrt(3.0)


def shapiro_francia_z(x):
    n = x.shape[1]
    a = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    a /= np.sqrt((a * a).sum())
    xs = np.sort(x, 1)
    c = xs - xs.mean(1, keepdims=True)
    w = (c @ a) ** 2 / (c * c).sum(1)
    u = np.log(n)
    v = np.log(u)
    mu = -1.2725 + 1.0521 * (v - u)
    sigma = 1.0308 - 0.26758 * (v + 2.0 / u)
    return (np.log1p(-w) - mu) / sigma


def simulate(stat, m, sims, rng, budget):
    rows = max(1, budget // m)
    out = []
    done = 0
    while done < sims:
        b = min(rows, sims - done)
        out.append(stat(rng.standard_normal((b, m))))
        done += b
    return np.concatenate(out)


def table(name, stat, grid, sims_for, budget_for, seed, path):
    lv = levels()
    rng = np.random.default_rng(seed)
    with open(path, "w") as f:
        f.write(f"# {name} null quantiles; rows: m, then quantiles at the levels below\n")
        f.write(f"# numpy default_rng seed {seed}\n")
        f.write("levels," + ",".join(repr(float(v)) for v in lv) + "\n")
        for m in grid:
            sims = sims_for(m)
            values = simulate(stat, m, sims, rng, budget_for(m))
            q = np.quantile(values, lv)
            f.write(f"{m}," + ",".join(f"{v:.9e}" for v in q) + "\n")
            f.flush()
            print(name, m, sims, flush=True)


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "../data"
    which = set(sys.argv[2:]) or {"ks", "ep", "sf"}
    if "ks" in which:
        table("lilliefors", lilliefors, KS_GRID, lambda m: 1_000_000,
              lambda m: 4_000_000, 20240611, f"{out}/lilliefors_null.csv")
    if "ep" in which:
        table("epps_pulley", epps_pulley_chunked, EP_GRID,
              lambda m: 1_000_000 if m <= 64 else 200_000,
              lambda m: max(m * m, 2_000_000 // m), 20240612,
              f"{out}/epps_pulley_null.csv")
    if "sf" in which:
        table("shapiro_francia_z", shapiro_francia_z, SF_GRID,
              lambda m: 1_000_000 if m <= 256 else 200_000,
              lambda m: 4_000_000, 20240613,
              f"{out}/shapiro_francia_null.csv")
