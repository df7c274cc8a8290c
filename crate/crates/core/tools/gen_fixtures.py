"""Reference values for the normality tests on fixed samples.

SW comes from scipy.stats.shapiro. SF and CVM are direct numpy
implementations of their textbook formulas, the Lilliefors statistic comes
from statsmodels, and the Lilliefors and Epps-Pulley p-values are brute-force
Monte Carlo estimates computed here (independent of the tables shipped with
the crate). KS uniformity uses scipy.stats.kstest with the exact method.

    python3 gen_fixtures.py ../tests/fixtures/gof_reference.json
"""
import json
import sys

import numpy as np
from scipy import stats
from scipy.special import ndtr, ndtri
from statsmodels.stats.diagnostic import lilliefors

KS_SIMS = 2_000_000
EP_SIMS = 200_000


def studentize(x, axis=-1):
    x = np.asarray(x, float)
    return (x - x.mean(axis, keepdims=True)) / x.std(axis, ddof=1, keepdims=True)


def shapiro_francia(x):
    x = np.sort(np.asarray(x, float))
    n = len(x)
    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    a = m / np.sqrt(m @ m)
    w = (a @ x) ** 2 / ((x - x.mean()) ** 2).sum()
    u = np.log(n)
    v = np.log(u)
    mu = -1.2725 + 1.0521 * (v - u)
    sigma = 1.0308 - 0.26758 * (v + 2.0 / u)
    return w, float(stats.norm.sf((np.log(1.0 - w) - mu) / sigma))


def cramer_von_mises(x):
    z = ndtr(np.sort(studentize(x)))
    n = len(z)
    w = 1.0 / (12 * n) + ((z - (2 * np.arange(1, n + 1) - 1) / (2.0 * n)) ** 2).sum()
    ww = w * (1 + 0.5 / n)
    if ww < 0.0275:
        p = 1 - np.exp(-13.953 + 775.5 * ww - 12542.61 * ww ** 2)
    elif ww < 0.051:
        p = 1 - np.exp(-5.903 + 179.546 * ww - 1515.29 * ww ** 2)
    elif ww < 0.092:
        p = np.exp(0.886 - 31.62 * ww + 10.897 * ww ** 2)
    elif ww < 1.1:
        p = np.exp(1.111 - 34.242 * ww + 12.832 * ww ** 2)
    else:
        p = 7.37e-10
    return ww, float(p)


def ks_stat_rows(z):
    n = z.shape[1]
    f = ndtr(np.sort(z, 1))
    i = np.arange(1, n + 1)
    return np.maximum((i / n - f).max(1), (f - (i - 1) / n).max(1))


def ep_stat_rows(z):
    n = z.shape[1]
    d = z[:, :, None] - z[:, None, :]
    s = np.exp(-0.5 * d * d).sum((1, 2)) / n
    return s - np.sqrt(2.0) * np.exp(-0.25 * z * z).sum(1) + n / np.sqrt(3.0)


def mc_pvalue(stat_rows, observed, m, sims, rng, block):
    exceed = 0
    done = 0
    while done < sims:
        rows = min(block, sims - done)
        z = studentize(rng.standard_normal((rows, m)))
        s = stat_rows(z)
        exceed += (s[:, None] >= np.asarray(observed)[None, :]).sum(0)
        done += rows
    return exceed / sims


def main(out_path):
    rng = np.random.default_rng(20240613)
    samples = []
    for m in (20, 64, 100):
        samples.append(("normal", rng.standard_normal(m)))
        samples.append(("t5", rng.standard_t(5, m)))
        samples.append(("lognormal", rng.lognormal(0.0, 0.35, m)))
    cases = []
    by_m = {}
    for name, x in samples:
        m = len(x)
        sw = stats.shapiro(x)
        sf = shapiro_francia(x)
        cvm = cramer_von_mises(x)
        ks_stat, _ = lilliefors(x, dist="norm", pvalmethod="table")
        ep = ep_stat_rows(studentize(x)[None, :])[0]
        case = {
            "name": f"{name}_{m}",
            "values": [float(v) for v in x],
            "SW": {"stat": float(sw.statistic), "pvalue": float(sw.pvalue)},
            "SF": {"stat": float(sf[0]), "pvalue": sf[1]},
            "CVM": {"stat": float(cvm[0]), "pvalue": cvm[1]},
            "KS": {"stat": float(ks_stat)},
            "EP": {"stat": float(ep)},
        }
        cases.append(case)
        by_m.setdefault(m, []).append(case)
    sim_rng = np.random.default_rng(20240614)
    for m, group in sorted(by_m.items()):
        ks_obs = [c["KS"]["stat"] for c in group]
        ep_obs = [c["EP"]["stat"] for c in group]
        ks_p = mc_pvalue(ks_stat_rows, ks_obs, m, KS_SIMS, sim_rng, max(1, 4_000_000 // m))
        ep_p = mc_pvalue(ep_stat_rows, ep_obs, m, EP_SIMS, sim_rng, max(1, 2_000_000 // (m * m)))
        for c, pk, pe in zip(group, ks_p, ep_p):
            c["KS"]["pvalue"] = float(pk)
            c["EP"]["pvalue"] = float(pe)
        print(f"m={m} done", flush=True)

    uniform_cases = []
    for seed, shape in ((1, 1.0), (2, 1.0), (3, 0.7)):
        u = np.random.default_rng(seed).uniform(size=200) ** shape
        r = stats.kstest(u, "uniform", method="exact")
        uniform_cases.append({"values": [float(v) for v in u], "stat": float(r.statistic), "pvalue": float(r.pvalue)})

    doc = {
        "comment": "see tools/gen_fixtures.py",
        "ks_sims": KS_SIMS,
        "ep_sims": EP_SIMS,
        "cases": cases,
        "ks_uniform": uniform_cases,
    }
    with open(out_path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1])
