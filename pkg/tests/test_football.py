from pathlib import Path

import numpy as np
import pytest

from empl.experiments import football as fb

MINI = Path(__file__).parent / "data" / "mini_league.csv"

# traced by hand from the fixture; clubs in id order Alpha, Beta, Delta, Gamma
MINI_TABLE = np.array([
    [1, 4, 2, 3],
    [1, 2, 4, 3],
    [1, 2, 4, 3],
    [1, 3, 2, 4],
    [1, 2, 3, 4],
    [1, 3, 2, 4],
])
MINI_POINTS = np.array([
    [3, 3, 1, 3, 3, 0],
    [0, 3, 1, 0, 3, 0],
    [1, 0, 1, 3, 0, 3],
    [1, 0, 1, 0, 0, 3],
])


@pytest.fixture
def mini():
    (season,) = fb.read_seasons_csv(MINI)
    return season


def test_mini_league_ingestion(mini):
    assert mini.clubs == ("Alpha", "Beta", "Delta", "Gamma")
    assert mini.n_weeks == 6
    pts, gf, ga = fb.match_points(mini)
    np.testing.assert_array_equal(pts, MINI_POINTS)
    np.testing.assert_array_equal(gf.sum(axis=1), [11, 5, 6, 5])
    np.testing.assert_array_equal(ga.sum(axis=1), [4, 6, 10, 7])


def test_mini_league_table(mini):
    np.testing.assert_array_equal(fb.league_table(mini), MINI_TABLE)
    np.testing.assert_array_equal(fb.final_table(mini), [1, 3, 2, 4])


def test_mini_position_histograms(mini):
    expected = np.array([
        [6, 0, 0, 0],
        [0, 3, 2, 1],
        [0, 3, 1, 2],
        [0, 0, 3, 3],
    ]) / 6
    np.testing.assert_allclose(fb.position_histograms(mini), expected, atol=1e-15)


def test_all_draws_resolved_by_id():
    n = 6
    home, away = fb.round_robin(n)
    zeros = np.zeros_like(home)
    s = fb.Season("draws", tuple(f"c{i}" for i in range(n)), home, away, zeros, zeros)
    table = fb.league_table(s)
    assert np.all(table == np.arange(1, n + 1))
    hist = fb.position_histograms(s)
    assert hist[0, 0] == 1.0


def test_dominant_club_tops_the_table():
    rng = np.random.default_rng(0)
    s = fb.synthetic_season("dom", rng)
    hg, ag = s.home_goals.copy(), s.away_goals.copy()
    star = 5
    hg[s.home == star] = 9
    ag[s.home == star] = 0
    ag[s.away == star] = 9
    hg[s.away == star] = 0
    s = fb.Season("dom", s.clubs, s.home, s.away, hg, ag)
    table = fb.league_table(s)
    assert np.all(table[:, star] == 1)
    pts, _, _ = fb.match_points(s)
    assert np.all(pts[star] == 3)


def test_synthetic_season_structure():
    s = fb.synthetic_season("x", np.random.default_rng(1))
    fb.validate_season(s)
    assert s.n_clubs == 18 and s.n_weeks == 34
    hist = fb.position_histograms(s)
    np.testing.assert_allclose(hist.sum(axis=1), 1.0)
    assert np.allclose(hist * 34, np.round(hist * 34))
    pts, _, _ = fb.match_points(s)
    assert set(np.unique(pts)) <= {0, 1, 3}


def test_synthetic_home_advantage():
    rng = np.random.default_rng(2)
    seasons = fb.synthetic_seasons(20, rng)
    home = np.mean([s.home_goals.mean() for s in seasons])
    away = np.mean([s.away_goals.mean() for s in seasons])
    assert home > away


def test_augmentation_preserves_final_table(mini):
    rng = np.random.default_rng(3)
    season = fb.synthetic_season("aug", rng)
    base = fb.final_table(season)
    for s in fb.augment_seasons([season, mini], 25, rng):
        ref = base if s.name == "aug" else fb.final_table(mini)
        np.testing.assert_array_equal(fb.final_table(s), ref)


def test_season_dataset_shapes(mini):
    x, y = fb.season_dataset([mini, mini])
    assert x.shape == (8, 6) and y.shape == (8, 4)
    np.testing.assert_allclose(x[:4], MINI_POINTS / 3)


def test_validation_rejects_bad_fixtures(mini):
    bad = fb.Season("bad", mini.clubs, mini.home.copy(), mini.away.copy(), mini.home_goals, mini.away_goals)
    bad.away[0, 0] = bad.home[0, 0]
    with pytest.raises(fb.MalformedSeason):
        fb.validate_season(bad)
    odd = fb.Season("odd", ("a", "b", "c"), np.zeros((4, 1), int), np.zeros((4, 1), int),
                    np.zeros((4, 1), int), np.zeros((4, 1), int))
    with pytest.raises(fb.MalformedSeason):
        fb.validate_season(odd)


def test_csv_errors(tmp_path):
    p = tmp_path / "no_cols.csv"
    p.write_text("season,date,home,away\n")
    with pytest.raises(fb.MalformedSeason):
        fb.read_seasons_csv(p)
    p = tmp_path / "short.csv"
    p.write_text("\n".join(MINI.read_text().splitlines()[:-2]) + "\n")
    with pytest.raises(fb.MalformedSeason):
        fb.read_seasons_csv(p)


def test_closest_club_tie_goes_to_lowest_id():
    assert fb.closest_club(np.array([50, 40, 60, 40]), 45) == 0
    assert fb.closest_club(np.array([50, 40, 60, 40]), 41) == 1
    assert fb.closest_club(np.array([50, 40, 60, 40]), 58) == 2


def test_transplant_into_own_season(mini):
    pts, gf, ga = fb.match_points(mini)
    hist = fb.position_histograms(mini)
    # Alpha's 13 points are unique, so it replaces itself
    np.testing.assert_allclose(fb.transplant_histogram(pts[0], gf[0], ga[0], mini), hist[0])


def test_bootstrap_band_shape_and_order(mini):
    rng = np.random.default_rng(4)
    pool = fb.augment_seasons([mini], 10, rng)
    pts, gf, ga = fb.match_points(mini)
    band = fb.bootstrap_band(pts[1], gf[1], ga[1], pool, 50, fb.LEVELS, rng)
    assert band.shape == (9, 4)
    assert np.all(np.diff(band, axis=0) >= 0)
    np.testing.assert_allclose(band[:, -1], 1.0, atol=1e-12)


def test_missing_source():
    cfg = fb.FootballExperiment(source="")
    with pytest.raises(fb.DataUnavailable):
        fb.load_seasons(cfg, np.random.default_rng(0))
    with pytest.raises(fb.DataUnavailable):
        fb.load_seasons(fb.FootballExperiment(source="/nonexistent.csv"), np.random.default_rng(0))
