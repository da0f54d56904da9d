"""League-table position histograms from a club's sequence of match points.

A season is a double round robin: ``n`` clubs, ``2 (n - 1)`` weeks,
``n / 2`` matches per week.  The network input for a club is its points per
week (0, 1 or 3, scaled by 1/3); the label is the histogram of its table
positions over all weeks.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import nn
from ..oracles import _lower_empirical_quantiles
from .gaussian import GAUSSIAN_LOSS, band_flags, gaussian_band, init_gaussian_net

N_CLUBS = 18
LEVELS = tuple(np.round(np.arange(1, 10) / 10, 10))


class MalformedSeason(ValueError):
    pass


class DataUnavailable(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Season:
    """Match results indexed ``[week, slot]``; clubs are identified by their index in ``clubs``."""

    name: str
    clubs: tuple
    home: np.ndarray
    away: np.ndarray
    home_goals: np.ndarray
    away_goals: np.ndarray

    @property
    def n_clubs(self) -> int:
        return len(self.clubs)

    @property
    def n_weeks(self) -> int:
        return self.home.shape[0]


def validate_season(season: Season) -> None:
    n = season.n_clubs
    if n < 2 or n % 2:
        raise MalformedSeason(f"{season.name}: need an even number of clubs, got {n}")
    shape = (2 * (n - 1), n // 2)
    for arr in (season.home, season.away, season.home_goals, season.away_goals):
        if arr.shape != shape:
            raise MalformedSeason(f"{season.name}: expected {shape[0]} weeks of {shape[1]} matches, got {arr.shape}")
    for w in range(shape[0]):
        playing = np.concatenate([season.home[w], season.away[w]])
        if len(np.unique(playing)) != n or playing.min() < 0 or playing.max() >= n:
            raise MalformedSeason(f"{season.name}: week {w + 1} does not feature every club exactly once")
    pairs = set(zip(season.home.ravel().tolist(), season.away.ravel().tolist()))
    if len(pairs) != n * (n - 1):
        raise MalformedSeason(f"{season.name}: fixtures are not a double round robin")
    if np.any(season.home_goals < 0) or np.any(season.away_goals < 0):
        raise MalformedSeason(f"{season.name}: negative goal counts")


def match_points(season: Season):
    """Per-club, per-week ``(points, goals_for, goals_against)``, each shape ``(n, W)``."""
    n, w = season.n_clubs, season.n_weeks
    pts = np.zeros((n, w), dtype=np.int64)
    gf = np.zeros((n, w), dtype=np.int64)
    ga = np.zeros((n, w), dtype=np.int64)
    weeks = np.repeat(np.arange(w)[:, None], season.home.shape[1], axis=1)
    hg, ag = season.home_goals, season.away_goals
    home_pts = np.where(hg > ag, 3, np.where(hg == ag, 1, 0))
    away_pts = np.where(ag > hg, 3, np.where(hg == ag, 1, 0))
    pts[season.home, weeks] = home_pts
    pts[season.away, weeks] = away_pts
    gf[season.home, weeks] = hg
    gf[season.away, weeks] = ag
    ga[season.home, weeks] = ag
    ga[season.away, weeks] = hg
    return pts, gf, ga


def rank_clubs(points, goal_diff, goals_for, ids) -> np.ndarray:
    """1-based positions: points, then goal difference, then goals scored, then lowest id."""
    order = np.lexsort((ids, -goals_for, -goal_diff, -points))
    pos = np.empty(len(order), dtype=np.int64)
    pos[order] = np.arange(1, len(order) + 1)
    return pos


def league_table(season: Season) -> np.ndarray:
    """Positions of every club after every week, shape ``(W, n)``."""
    validate_season(season)
    pts, gf, ga = match_points(season)
    cp, cf, ca = (np.cumsum(a, axis=1) for a in (pts, gf, ga))
    ids = np.arange(season.n_clubs)
    return np.stack([rank_clubs(cp[:, w], cf[:, w] - ca[:, w], cf[:, w], ids)
                     for w in range(season.n_weeks)])


def final_table(season: Season) -> np.ndarray:
    return league_table(season)[-1]


def position_histograms(season: Season) -> np.ndarray:
    """``(n, n)``: row c is club c's fraction of weeks spent at each position."""
    table = league_table(season)
    n = season.n_clubs
    hist = np.zeros((n, n))
    for c in range(n):
        hist[c] = np.bincount(table[:, c] - 1, minlength=n)
    return hist / season.n_weeks


def permute_season(season: Season, perm) -> Season:
    perm = np.asarray(perm)
    return Season(season.name, season.clubs, season.home[perm], season.away[perm],
                  season.home_goals[perm], season.away_goals[perm])


def augment_seasons(seasons: Sequence[Season], k: int, rng) -> list:
    """``k`` replays of every season with its weeks in a uniformly random order."""
    out = []
    for s in seasons:
        for _ in range(k):
            out.append(permute_season(s, rng.permutation(s.n_weeks)))
    return out


def season_dataset(seasons: Sequence[Season]):
    """``(inputs, labels)``: points per week scaled to [0, 1], position histograms."""
    xs, ys = [], []
    for s in seasons:
        pts, _, _ = match_points(s)
        xs.append(pts / 3.0)
        ys.append(position_histograms(s))
    return np.concatenate(xs), np.concatenate(ys)


# -- data sources --------------------------------------------------------------------

def round_robin(n: int, rng=None):
    """Circle-method double round robin: ``(home, away)`` of shape ``(2(n-1), n/2)``."""
    arr = list(range(n))
    if rng is not None:
        arr = list(rng.permutation(n))
    home, away = [], []
    for r in range(n - 1):
        h, a = [], []
        for i in range(n // 2):
            x, y = arr[i], arr[n - 1 - i]
            if (r + i) % 2:
                x, y = y, x
            h.append(x)
            a.append(y)
        home.append(h)
        away.append(a)
        arr = [arr[0]] + [arr[-1]] + arr[1:-1]
    home, away = np.array(home), np.array(away)
    return np.concatenate([home, away]), np.concatenate([away, home])


def synthetic_season(name: str, rng, n_clubs: int = N_CLUBS, home_advantage: float = 0.25) -> Season:
    """Poisson goals with rate ``1.5 exp(0.25 (s_self - s_other) [+ home advantage])``."""
    strength = rng.standard_normal(n_clubs)
    home, away = round_robin(n_clubs, rng)
    diff = strength[home] - strength[away]
    home_goals = rng.poisson(1.5 * np.exp(0.25 * diff + home_advantage))
    away_goals = rng.poisson(1.5 * np.exp(-0.25 * diff))
    clubs = tuple(f"club_{i + 1:02d}" for i in range(n_clubs))
    return Season(name, clubs, home, away, home_goals, away_goals)


def synthetic_seasons(n_seasons: int, rng, n_clubs: int = N_CLUBS) -> list:
    return [synthetic_season(f"synthetic_{i + 1:03d}", rng, n_clubs) for i in range(n_seasons)]


CSV_COLUMNS = ("season", "date", "home_team", "away_team", "home_goals", "away_goals")


def _assign_weeks(matches, clubs):
    """Greedy matchday assignment in date order; each club plays once per week."""
    n = len(clubs)
    n_weeks, per_week = 2 * (n - 1), n // 2
    slots = [[] for _ in range(n_weeks)]
    busy = [set() for _ in range(n_weeks)]
    played = defaultdict(int)
    for h, a, hg, ag in matches:
        w = max(played[h], played[a])
        while w < n_weeks and (h in busy[w] or a in busy[w] or len(slots[w]) == per_week):
            w += 1
        if w == n_weeks:
            raise MalformedSeason("cannot arrange matches into weeks")
        slots[w].append((h, a, hg, ag))
        busy[w].update((h, a))
        played[h] = w + 1
        played[a] = w + 1
    if any(len(s) != per_week for s in slots):
        raise MalformedSeason("incomplete season")
    return np.array(slots)


def read_seasons_csv(path) -> list:
    """Read match results with columns ``season,date,home_team,away_team,home_goals,away_goals``."""
    by_season = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise MalformedSeason(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            by_season[row["season"]].append(row)
    seasons = []
    for name in sorted(by_season):
        rows = sorted(by_season[name], key=lambda r: r["date"])
        clubs = tuple(sorted({r["home_team"] for r in rows} | {r["away_team"] for r in rows}))
        idx = {c: i for i, c in enumerate(clubs)}
        matches = [(idx[r["home_team"]], idx[r["away_team"]], int(r["home_goals"]), int(r["away_goals"]))
                   for r in rows]
        arr = _assign_weeks(matches, clubs)
        season = Season(name, clubs, arr[..., 0], arr[..., 1], arr[..., 2], arr[..., 3])
        validate_season(season)
        seasons.append(season)
    return seasons


# -- bootstrap bands -----------------------------------------------------------------

def closest_club(final_points: np.ndarray, target: int) -> int:
    """Club with final points closest to ``target``; ties go to the lowest id."""
    return int(np.argmin(np.abs(final_points - target)))


def transplant_histogram(pts, gf, ga, host: Season) -> np.ndarray:
    """Position histogram of a club with the given weekly results placed into ``host``.

    The host club whose final points are closest is removed and the
    transplanted club takes its id for the final tiebreak.
    """
    hp, hf, ha = match_points(host)
    cp, cf, ca = (np.cumsum(a, axis=1) for a in (hp, hf, ha))
    removed = closest_club(cp[:, -1], int(np.sum(pts)))
    tp, tf, ta = np.cumsum(pts), np.cumsum(gf), np.cumsum(ga)
    cp[removed], cf[removed], ca[removed] = tp, tf, ta
    ids = np.arange(host.n_clubs)
    counts = np.zeros(host.n_clubs)
    for w in range(host.n_weeks):
        pos = rank_clubs(cp[:, w], cf[:, w] - ca[:, w], cf[:, w], ids)
        counts[pos[removed] - 1] += 1
    return counts / host.n_weeks


def bootstrap_band(pts, gf, ga, pool: Sequence[Season], n_boot: int, levels, rng) -> np.ndarray:
    """Bin-wise lower empirical quantiles of the cumulative transplant histograms, ``(n_levels, n)``."""
    chosen = rng.choice(len(pool), size=n_boot, replace=len(pool) < n_boot)
    cums = np.stack([np.cumsum(transplant_histogram(pts, gf, ga, pool[i])) for i in chosen])
    return _lower_empirical_quantiles(cums, levels)


# -- the experiment ------------------------------------------------------------------

@dataclass(frozen=True)
class FootballExperiment:
    source: str = "synthetic"          # "synthetic" or a CSV path
    n_seasons: int = 23
    test_seasons: tuple = ()           # names; empty -> last three
    replays: int = 1000
    hidden: tuple = (128, 128)
    batch_norm: bool = False
    dropout: float = 0.5
    loss: nn.LossConfig = field(default_factory=lambda: nn.LossConfig("empl_smoothed", "uniform", 0.5, 0.005))
    schedule: nn.Schedule = field(default_factory=lambda: nn.Schedule(0, 250, 2048, 1e-3, 100))
    n_bootstrap: int = 200
    seed: int = 0
    baseline_schedule: nn.Schedule = None


@dataclass
class ClubReport:
    season: str
    club: str
    final_position: int
    truth: np.ndarray            # cumulative histogram
    empl_band: np.ndarray        # (n_levels, n)
    gauss_band: np.ndarray
    bootstrap_band: np.ndarray
    gauss_out_of_range: int
    gauss_non_monotone: int

    @property
    def band_overlap_bins(self) -> int:
        """Bins where the [10%, 90%] EMPL and bootstrap ranges intersect."""
        lo = np.maximum(self.empl_band[0], self.bootstrap_band[0])
        hi = np.minimum(self.empl_band[-1], self.bootstrap_band[-1])
        return int(np.sum(lo <= hi))


@dataclass
class FootballReport:
    levels: tuple
    clubs: list

    @property
    def gauss_flag_total(self) -> int:
        return sum(c.gauss_out_of_range + c.gauss_non_monotone for c in self.clubs)

    def empl_bands_valid(self) -> bool:
        for c in self.clubs:
            b = c.empl_band
            if b.min() < 0 or b.max() > 1 or np.any(np.diff(b, axis=-1) < 0):
                return False
        return True


def load_seasons(cfg: FootballExperiment, rng):
    if cfg.source == "synthetic":
        seasons = synthetic_seasons(cfg.n_seasons, rng)
    elif cfg.source:
        try:
            seasons = read_seasons_csv(cfg.source)
        except FileNotFoundError as exc:
            raise DataUnavailable(f"football CSV not found: {cfg.source}") from exc
    else:
        raise DataUnavailable("no football data source configured")
    if cfg.test_seasons:
        test = [s for s in seasons if s.name in cfg.test_seasons]
        train = [s for s in seasons if s.name not in cfg.test_seasons]
    else:
        train, test = seasons[:-3], seasons[-3:]
    if not train or not test:
        raise DataUnavailable("need at least one training and one test season")
    return train, test


def run_football(cfg: FootballExperiment, progress=None):
    """Returns ``(empl_net, gauss_net, curves, report)``."""
    rng = np.random.default_rng(cfg.seed)
    train_seasons, test_seasons = load_seasons(cfg, rng)
    augmented = augment_seasons(train_seasons, cfg.replays, rng)
    x, y = season_dataset(augmented)
    data = nn.ArrayDataset(x, y)
    n = train_seasons[0].n_clubs
    w = train_seasons[0].n_weeks

    empl_net = nn.init_network(w, cfg.hidden, n, rng, batch_norm=cfg.batch_norm, dropout=cfg.dropout)
    empl_net, curve = nn.train(empl_net, data, cfg.loss, cfg.schedule, rng, progress=progress)
    gauss_net = init_gaussian_net(w, cfg.hidden, n, rng, batch_norm=cfg.batch_norm, dropout=cfg.dropout)
    gauss_net, gauss_curve = nn.train(gauss_net, data, GAUSSIAN_LOSS, cfg.baseline_schedule or cfg.schedule,
                                      rng)

    levels = np.asarray(LEVELS)
    clubs = []
    for season in test_seasons:
        pts, gf, ga = match_points(season)
        truth = np.cumsum(position_histograms(season), axis=1)
        finals = final_table(season)
        empl_b = nn.predict_cumulative(empl_net, pts / 3.0, levels)
        gauss_b = gaussian_band(gauss_net, pts / 3.0, levels)
        for c in range(season.n_clubs):
            flags = band_flags(gauss_b[c])
            boot = bootstrap_band(pts[c], gf[c], ga[c], augmented, cfg.n_bootstrap, levels, rng)
            clubs.append(ClubReport(season.name, season.clubs[c], int(finals[c]), truth[c],
                                    empl_b[c], gauss_b[c], boot, flags.out_of_range, flags.non_monotone))
    report = FootballReport(tuple(float(t) for t in levels), clubs)
    return empl_net, gauss_net, {"empl": curve, "gaussian": gauss_curve}, report
