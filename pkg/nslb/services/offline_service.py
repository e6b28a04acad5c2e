# =============================================================================
# NSLB - OFFLINE SERVICE
# =============================================================================

"""
Offline pipeline for the MovieLens superuser environment.

Ratings are filtered to dense users and movies, split in half at random, and
each half is completed with regularized alternating least squares. Training
user factors are clustered with k-means for the agents' Gaussian priors and
prior transition matrix. Test user factors are clustered on their own to pick
the environment's latent users.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.optimize import linear_sum_assignment

from ..api.schemas import OfflineBuildConfig
from ..core.constants import (
    ALS_ITERATIONS,
    ALS_RANK,
    ALS_REGULARIZATION,
    DEFAULT_CHANGE_PROB,
    DIRICHLET_SCALE,
    FLOAT_FORMAT,
    KMEANS_MAX_ITER,
    PRIOR_DIAGONAL_LOAD,
    SUCCESS_MESSAGES,
    SUPERUSER_MIX,
)
from ..core.exceptions import ConfigurationError, DataFormatError
from ..core.types import DirichletCounts, TransitionMatrix
from .environment_service import MovieCatalog, SuperuserData, build_superuser_transition

logger = logging.getLogger(__name__)

RATING_COLUMNS = ["user_id", "movie_id", "rating", "timestamp"]


# =============================================================================
# RATINGS TABLE
# =============================================================================

@dataclass
class RatingsTable:
    """Rating triples plus the movie -> genres map."""
    ratings: pd.DataFrame
    genres: Dict[int, Tuple[str, ...]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ratings)

    @property
    def user_ids(self) -> np.ndarray:
        return np.sort(self.ratings["user_id"].unique())

    @property
    def movie_ids(self) -> np.ndarray:
        return np.sort(self.ratings["movie_id"].unique())

    @property
    def num_users(self) -> int:
        return int(self.ratings["user_id"].nunique())

    @property
    def num_movies(self) -> int:
        return int(self.ratings["movie_id"].nunique())

    def subset(self, mask) -> "RatingsTable":
        return RatingsTable(self.ratings[np.asarray(mask, dtype=bool)].reset_index(drop=True), self.genres)

    def reindex(self) -> Tuple[pd.DataFrame, np.ndarray, np.ndarray]:
        """Ratings with dense `user_index` / `movie_index` columns, plus the id lookups.

        Indices follow sorted original ids.
        """
        user_ids = self.user_ids
        movie_ids = self.movie_ids
        frame = self.ratings.copy()
        frame["user_index"] = np.searchsorted(user_ids, frame["user_id"].to_numpy())
        frame["movie_index"] = np.searchsorted(movie_ids, frame["movie_id"].to_numpy())
        return frame, user_ids, movie_ids


def _read_lines(path: Path, encoding: str) -> List[str]:
    if not path.is_file():
        raise DataFormatError(path=str(path), code="MISSING_FILE")
    with path.open("r", encoding=encoding) as handle:
        return handle.read().splitlines()


def _parse_ratings(path: Path) -> pd.DataFrame:
    rows = []
    seen = set()
    for number, line in enumerate(_read_lines(path, "latin-1"), start=1):
        if not line.strip():
            continue
        parts = line.split("::")
        if len(parts) != 4:
            raise DataFormatError(f"expected 4 fields, got {len(parts)}", line_number=number, path=str(path))
        try:
            user, movie, rating, timestamp = int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])
        except ValueError:
            raise DataFormatError(f"non-numeric field in {line!r}", line_number=number, path=str(path))
        if not 1.0 <= rating <= 5.0:
            raise DataFormatError(f"rating {rating} outside [1, 5]", line_number=number, path=str(path))
        if (user, movie) in seen:
            raise DataFormatError(f"user {user}, movie {movie}", line_number=number, path=str(path),
                                  code="DUPLICATE_RATING")
        seen.add((user, movie))
        rows.append((user, movie, rating, timestamp))
    frame = pd.DataFrame(rows, columns=RATING_COLUMNS)
    return frame.astype({"user_id": np.int64, "movie_id": np.int64, "rating": float, "timestamp": np.int64})


def _parse_movies(path: Path) -> Dict[int, Tuple[str, ...]]:
    genres: Dict[int, Tuple[str, ...]] = {}
    for number, line in enumerate(_read_lines(path, "latin-1"), start=1):
        if not line.strip():
            continue
        parts = line.split("::")
        if len(parts) != 3:
            raise DataFormatError(f"expected 3 fields, got {len(parts)}", line_number=number, path=str(path))
        try:
            movie = int(parts[0])
        except ValueError:
            raise DataFormatError(f"non-numeric movie id {parts[0]!r}", line_number=number, path=str(path))
        genres[movie] = tuple(label for label in parts[2].split("|") if label)
    return genres


def load_ratings(ratings_path: Union[str, Path], movies_path: Union[str, Path, None] = None) -> RatingsTable:
    """Parse `UserID::MovieID::Rating::Timestamp` lines and, optionally, `MovieID::Title::Genres`."""
    ratings = _parse_ratings(Path(ratings_path))
    genres = _parse_movies(Path(movies_path)) if movies_path is not None else {}
    logger.info(f"Loaded {len(ratings)} ratings from {ratings_path}")
    return RatingsTable(ratings, genres)


# =============================================================================
# FILTERING AND SPLITTING
# =============================================================================

def _filter_once(table: RatingsTable, min_user: int, min_movie: int) -> RatingsTable:
    frame = table.ratings
    user_counts = frame.groupby("user_id")["movie_id"].transform("size")
    table = table.subset(user_counts >= min_user)
    frame = table.ratings
    movie_counts = frame.groupby("movie_id")["user_id"].transform("size")
    return table.subset(movie_counts >= min_movie)


def filter_dense(table: RatingsTable, min_user: int = 200, min_movie: int = 200,
                 fixpoint: bool = False) -> RatingsTable:
    """Drop users with fewer than `min_user` ratings, then movies with fewer than `min_movie`.

    A single pass of each by default; with `fixpoint` the two passes repeat
    until nothing changes.
    """
    if min_user < 0 or min_movie < 0:
        raise ConfigurationError("filter thresholds must be non-negative")
    if len(table) == 0:
        return table
    filtered = _filter_once(table, min_user, min_movie)
    while fixpoint and len(filtered) != len(table):
        table = filtered
        filtered = _filter_once(table, min_user, min_movie)
    logger.info(f"Dense filter ({min_user}, {min_movie}): {filtered.num_users} users, "
                f"{filtered.num_movies} movies, {len(filtered)} ratings")
    return filtered


def split_ratings(table: RatingsTable, fraction: float, rng: np.random.Generator) -> Tuple[RatingsTable, RatingsTable]:
    """Uniformly random partition; the train part gets exactly round(fraction * len) ratings."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"split fraction {fraction} not in (0, 1)")
    count = len(table)
    train_size = int(round(fraction * count))
    mask = np.zeros(count, dtype=bool)
    mask[rng.permutation(count)[:train_size]] = True
    return table.subset(mask), table.subset(~mask)


# =============================================================================
# MATRIX COMPLETION
# =============================================================================

@dataclass
class FactorModel:
    """Low-rank completion M ~ U V^T with its training history."""
    user_factors: np.ndarray
    movie_factors: np.ndarray
    rmse_history: List[float] = field(default_factory=list)
    objective_history: List[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.user_factors.shape[1]

    def predict(self, users, movies) -> np.ndarray:
        return np.einsum("ij,ij->i", self.user_factors[np.asarray(users)], self.movie_factors[np.asarray(movies)])

    def rmse(self, matrix) -> float:
        coo = sparse.coo_matrix(matrix)
        if coo.nnz == 0:
            return 0.0
        errors = coo.data - self.predict(coo.row, coo.col)
        return float(np.sqrt(np.mean(errors ** 2)))


def ratings_matrix(frame: pd.DataFrame, shape: Tuple[int, int]) -> sparse.csr_matrix:
    """Sparse users x movies matrix from a reindexed ratings frame."""
    return sparse.csr_matrix((frame["rating"].to_numpy(dtype=float),
                              (frame["user_index"].to_numpy(), frame["movie_index"].to_numpy())), shape=shape)


def _solve_rows(matrix: sparse.csr_matrix, other: np.ndarray, reg: float) -> np.ndarray:
    """Ridge solution of every row of `matrix` against the fixed `other` factors."""
    rank = other.shape[1]
    result = np.zeros((matrix.shape[0], rank))
    ridge = reg * np.eye(rank)
    for row in range(matrix.shape[0]):
        start, end = matrix.indptr[row], matrix.indptr[row + 1]
        if start == end:
            continue
        cols = matrix.indices[start:end]
        values = matrix.data[start:end]
        features = other[cols]
        result[row] = np.linalg.solve(features.T @ features + ridge, features.T @ values)
    return result


def als_objective(matrix: sparse.csr_matrix, user_factors: np.ndarray, movie_factors: np.ndarray,
                  reg: float) -> Tuple[float, float]:
    """(observed squared error + reg * (||U||^2 + ||V||^2), training RMSE)."""
    coo = matrix.tocoo()
    errors = coo.data - np.einsum("ij,ij->i", user_factors[coo.row], movie_factors[coo.col])
    squared = float(errors @ errors)
    penalty = reg * float((user_factors ** 2).sum() + (movie_factors ** 2).sum())
    rmse = float(np.sqrt(squared / coo.nnz)) if coo.nnz else 0.0
    return squared + penalty, rmse


def als_complete(matrix, rank: int = ALS_RANK, reg: float = ALS_REGULARIZATION,
                 iterations: int = ALS_ITERATIONS, rng: Optional[np.random.Generator] = None) -> FactorModel:
    """Alternating least squares on the observed entries of a sparse users x movies matrix.

    Each half-iteration solves the ridge normal equations of every row exactly,
    so the objective never increases. The objective is recorded after every
    half-iteration and the RMSE after every full iteration.
    """
    if reg <= 0.0:
        raise ConfigurationError("ALS needs a positive regularization")
    rng = rng if rng is not None else np.random.default_rng()
    matrix = sparse.csr_matrix(matrix, dtype=float)
    transposed = matrix.T.tocsr()
    num_users, num_movies = matrix.shape
    user_factors = 0.1 * rng.standard_normal((num_users, rank))
    movie_factors = 0.1 * rng.standard_normal((num_movies, rank))
    model = FactorModel(user_factors, movie_factors)

    for iteration in range(1, iterations + 1):
        model.user_factors = _solve_rows(matrix, model.movie_factors, reg)
        objective, _ = als_objective(matrix, model.user_factors, model.movie_factors, reg)
        model.objective_history.append(objective)
        model.movie_factors = _solve_rows(transposed, model.user_factors, reg)
        objective, rmse = als_objective(matrix, model.user_factors, model.movie_factors, reg)
        model.objective_history.append(objective)
        model.rmse_history.append(rmse)
        logger.info(f"ALS iteration {iteration}/{iterations}: rmse={rmse:.6f} objective={objective:.6f}")
    return model


# =============================================================================
# CLUSTERING
# =============================================================================

@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia_history: List[float]
    iterations: int

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _squared_distances(rows: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((rows[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_plusplus(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centroid drawn with probability proportional to D^2."""
    centroids = np.empty((k, rows.shape[1]))
    centroids[0] = rows[rng.integers(0, rows.shape[0])]
    for i in range(1, k):
        dist_sq = _squared_distances(rows, centroids[:i]).min(axis=1)
        total = dist_sq.sum()
        if total <= 0.0:
            centroids[i] = rows[rng.integers(0, rows.shape[0])]
            continue
        centroids[i] = rows[rng.choice(rows.shape[0], p=dist_sq / total)]
    return centroids


def kmeans(rows, k: int, rng: np.random.Generator, max_iter: int = KMEANS_MAX_ITER) -> KMeansResult:
    """Lloyd's iterations from k-means++ seeds until the assignments stop changing."""
    rows = np.asarray(rows, dtype=float)
    if not 1 <= k <= rows.shape[0]:
        raise ConfigurationError(f"k={k} for {rows.shape[0]} rows")
    centroids = kmeans_plusplus(rows, k, rng)
    assignments = np.full(rows.shape[0], -1)
    history: List[float] = []
    iteration = 0
    for iteration in range(1, max_iter + 1):
        dist_sq = _squared_distances(rows, centroids)
        updated = dist_sq.argmin(axis=1)
        history.append(float(dist_sq[np.arange(rows.shape[0]), updated].sum()))
        if np.array_equal(updated, assignments):
            break
        assignments = updated
        for cluster in range(k):
            members = rows[assignments == cluster]
            if members.shape[0]:
                centroids[cluster] = members.mean(axis=0)
            else:
                farthest = int(dist_sq[np.arange(rows.shape[0]), assignments].argmax())
                logger.debug(f"k-means: cluster {cluster} empty, reseeding from row {farthest}")
                centroids[cluster] = rows[farthest]
                assignments[farthest] = cluster
    logger.info(f"k-means converged after {iteration} iteration(s), inertia {history[-1]:.6f}")
    return KMeansResult(assignments, centroids, history, iteration)


def cluster_test_users(test_user_factors, tested, reference_centroids, rng: np.random.Generator) -> np.ndarray:
    """k-means on the test factors of `tested` users, labelled after the nearest reference centroid.

    Labels are matched one-to-one by minimum total squared distance so that
    state s of the environment sits closest to state s of the prior. Users
    outside `tested` get -1.
    """
    test_user_factors = np.asarray(test_user_factors, dtype=float)
    tested = np.asarray(tested, dtype=int)
    reference_centroids = np.asarray(reference_centroids, dtype=float)
    k = reference_centroids.shape[0]
    if tested.size < k:
        raise ConfigurationError(f"{tested.size} test user(s) for {k} clusters")
    clustering = kmeans(test_user_factors[tested], k, rng)
    rows, columns = linear_sum_assignment(_squared_distances(clustering.centroids, reference_centroids))
    relabel = np.empty(k, dtype=int)
    relabel[rows] = columns

    labels = np.full(test_user_factors.shape[0], -1)
    labels[tested] = relabel[clustering.assignments]
    return labels


# =============================================================================
# PRIOR CONSTRUCTION
# =============================================================================

@dataclass
class OfflinePrior:
    """Per-cluster Gaussian priors over user factors and the Dirichlet transition prior."""
    means: np.ndarray
    covariances: np.ndarray
    transition: TransitionMatrix
    alpha: DirichletCounts

    def to_json(self) -> Dict[str, list]:
        return {
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "alpha": self.alpha.alpha.tolist(),
            "transition": self.transition.probs.tolist(),
        }


def build_prior(factors, assignments, num_clusters: Optional[int] = None, scale: float = DIRICHLET_SCALE,
                change_prob: float = DEFAULT_CHANGE_PROB, mix: float = SUPERUSER_MIX) -> OfflinePrior:
    """Cluster means and covariances, with the transition prior built from the cluster means."""
    factors = np.asarray(factors, dtype=float)
    assignments = np.asarray(assignments, dtype=int)
    num_clusters = num_clusters if num_clusters is not None else int(assignments.max()) + 1
    dim = factors.shape[1]
    means = np.zeros((num_clusters, dim))
    covariances = np.zeros((num_clusters, dim, dim))
    for cluster in range(num_clusters):
        members = factors[assignments == cluster]
        if members.shape[0] == 0:
            raise ConfigurationError(f"cluster {cluster} has no members")
        means[cluster] = members.mean(axis=0)
        if members.shape[0] > 1:
            cov = np.atleast_2d(np.cov(members, rowvar=False))
        else:
            logger.warning(f"Cluster {cluster} has a single member; covariance is diagonal loading only")
            cov = np.zeros((dim, dim))
        covariances[cluster] = 0.5 * (cov + cov.T) + PRIOR_DIAGONAL_LOAD * np.eye(dim)
    transition = build_superuser_transition(means, change_prob, mix)
    alpha = DirichletCounts.from_transition(transition, scale)
    return OfflinePrior(means, covariances, transition, alpha)


# =============================================================================
# ARTIFACTS
# =============================================================================

@dataclass
class OfflineArtifacts:
    """Everything `offline build` writes, in memory."""
    movie_ids: np.ndarray
    user_ids: np.ndarray
    genres: Tuple[Tuple[str, ...], ...]
    train: FactorModel
    test: FactorModel
    train_clusters: np.ndarray
    test_clusters: np.ndarray
    prior: OfflinePrior

    def superuser_data(self) -> SuperuserData:
        catalog = MovieCatalog(self.train.movie_factors, self.genres, tuple(int(m) for m in self.movie_ids))
        return SuperuserData(
            catalog=catalog,
            train_movie_factors=self.train.movie_factors,
            test_movie_factors=self.test.movie_factors,
            test_user_factors=self.test.user_factors,
            test_clusters=self.test_clusters,
            prior_means=self.prior.means,
            prior_covs=self.prior.covariances,
            prior_transition=self.prior.transition,
            prior_alpha=self.prior.alpha,
        )


def _factor_frame(model: FactorModel, user_ids: np.ndarray, movie_ids: np.ndarray) -> pd.DataFrame:
    columns = [f"f{i}" for i in range(model.rank)]
    frames = []
    for kind, factors, ids in (("user", model.user_factors, user_ids), ("movie", model.movie_factors, movie_ids)):
        frame = pd.DataFrame(factors, columns=columns)
        frame.insert(0, "original_id", ids)
        frame.insert(0, "index", np.arange(len(ids)))
        frame.insert(0, "kind", kind)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def write_offline_artifacts(artifacts: OfflineArtifacts, out_dir: Union[str, Path]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _factor_frame(artifacts.train, artifacts.user_ids, artifacts.movie_ids).to_csv(
        out / "factors_train.csv", index=False, float_format=FLOAT_FORMAT)
    _factor_frame(artifacts.test, artifacts.user_ids, artifacts.movie_ids).to_csv(
        out / "factors_test.csv", index=False, float_format=FLOAT_FORMAT)

    train_rows = pd.DataFrame({"split": "train", "user_index": np.arange(len(artifacts.train_clusters)),
                               "cluster": artifacts.train_clusters})
    tested = np.nonzero(artifacts.test_clusters >= 0)[0]
    test_rows = pd.DataFrame({"split": "test", "user_index": tested, "cluster": artifacts.test_clusters[tested]})
    pd.concat([train_rows, test_rows], ignore_index=True).to_csv(out / "clusters.csv", index=False)

    pd.DataFrame({"movie_index": np.arange(len(artifacts.movie_ids)), "movie_id": artifacts.movie_ids,
                  "genres": ["|".join(labels) for labels in artifacts.genres]}).to_csv(out / "movies.csv", index=False)

    (out / "prior.json").write_text(json.dumps(artifacts.prior.to_json(), indent=2), encoding="utf-8")
    return out


def _read_csv(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise DataFormatError(path=str(path), code="MISSING_FILE")
    return pd.read_csv(path, keep_default_na=False)


def _read_factors(path: Path) -> Tuple[FactorModel, np.ndarray, np.ndarray]:
    frame = _read_csv(path)
    columns = [c for c in frame.columns if c.startswith("f")]
    users = frame[frame["kind"] == "user"].sort_values("index")
    movies = frame[frame["kind"] == "movie"].sort_values("index")
    model = FactorModel(users[columns].to_numpy(dtype=float), movies[columns].to_numpy(dtype=float))
    return model, users["original_id"].to_numpy(), movies["original_id"].to_numpy()


def load_offline_artifacts(directory: Union[str, Path]) -> OfflineArtifacts:
    """Read back the files written by `write_offline_artifacts`."""
    directory = Path(directory)
    train, user_ids, movie_ids = _read_factors(directory / "factors_train.csv")
    test, _, _ = _read_factors(directory / "factors_test.csv")

    clusters = _read_csv(directory / "clusters.csv")
    train_clusters = np.full(train.user_factors.shape[0], -1)
    test_clusters = np.full(test.user_factors.shape[0], -1)
    for split, target in (("train", train_clusters), ("test", test_clusters)):
        rows = clusters[clusters["split"] == split]
        target[rows["user_index"].to_numpy(dtype=int)] = rows["cluster"].to_numpy(dtype=int)

    movies = _read_csv(directory / "movies.csv").sort_values("movie_index")
    genres = tuple(tuple(label for label in str(value).split("|") if label) for value in movies["genres"])

    prior_path = directory / "prior.json"
    if not prior_path.is_file():
        raise DataFormatError(path=str(prior_path), code="MISSING_FILE")
    try:
        raw = json.loads(prior_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(str(exc), path=str(prior_path))
    prior = OfflinePrior(
        means=np.asarray(raw["means"], dtype=float),
        covariances=np.asarray(raw["covariances"], dtype=float),
        transition=TransitionMatrix.normalized(raw["transition"]),
        alpha=DirichletCounts(np.asarray(raw["alpha"], dtype=float)),
    )
    logger.debug(f"Loaded offline artifacts from {directory}")
    return OfflineArtifacts(movie_ids, user_ids, genres, train, test, train_clusters, test_clusters, prior)


def build_offline_artifacts(ratings_path: Union[str, Path], movies_path: Union[str, Path, None],
                            out_dir: Union[str, Path, None] = None,
                            config: Optional[OfflineBuildConfig] = None) -> OfflineArtifacts:
    """Full pipeline: load, filter, split, complete both halves, cluster, build the prior.

    The prior comes from k-means on the training user factors. Users with test
    ratings are clustered again on their test factors, independently, and those
    labels choose the environment's latent users.
    """
    config = config if config is not None else OfflineBuildConfig()
    split_rng, train_rng, test_rng, cluster_rng, test_cluster_rng = (
        np.random.default_rng(child) for child in np.random.SeedSequence(config.seed).spawn(5))

    table = filter_dense(load_ratings(ratings_path, movies_path), config.min_user, config.min_movie,
                         fixpoint=config.fixpoint)
    if len(table) == 0:
        raise ConfigurationError("no ratings survive the density filter")
    frame, user_ids, movie_ids = table.reindex()
    shape = (len(user_ids), len(movie_ids))
    train_part, test_part = split_ratings(RatingsTable(frame, table.genres), config.train_fraction, split_rng)

    train = als_complete(ratings_matrix(train_part.ratings, shape), config.rank, config.reg,
                         config.iterations, train_rng)
    test = als_complete(ratings_matrix(test_part.ratings, shape), config.rank, config.reg,
                        config.iterations, test_rng)

    clustering = kmeans(train.user_factors, config.clusters, cluster_rng)
    prior = build_prior(train.user_factors, clustering.assignments, config.clusters, config.dirichlet_scale,
                        config.change_prob, config.mix)

    tested = np.unique(test_part.ratings["user_index"].to_numpy())
    test_clusters = cluster_test_users(test.user_factors, tested, clustering.centroids, test_cluster_rng)

    genres = tuple(table.genres.get(int(movie), ()) for movie in movie_ids)
    artifacts = OfflineArtifacts(movie_ids, user_ids, genres, train, test, clustering.assignments,
                                 test_clusters, prior)
    if out_dir is not None:
        write_offline_artifacts(artifacts, out_dir)
        logger.info(f"{SUCCESS_MESSAGES['OFFLINE_COMPLETE']}: {out_dir}")
    return artifacts
