"""Multivariate gradient-boosted trees that choose, at each step, the outcome
whose fitted tree most changes the residual covariance matrix."""

__version__ = "0.1.0"

from .baselines import (BaggedCart, MvCartResult, WilksOLS, WilksResult, bag_mvcart,
                        fit_mvcart, select_cp, wilks_screen)
from .boosting import (BoostParams, MvModel, StepRecord, boost_multivariate, boost_univariate,
                       cov_discrepancy, predict_ensemble)
from .dataset import (Dataset, FoldPlan, ScalingParams, load_csv, make_folds,
                      split_train_test, standardize, write_csv)
from .estimators import (BaggedMultivariateTreeRegressor, MultivariateBoostingRegressor,
                         MultivariateTreeRegressor, WilksSelector)
from .exceptions import DataError, FormatVersionError, NumericalError
from .interpret import (cluster_covex, covex_matrix, departure_score, nonlin_scan,
                        partial_dependence, permutation_importance, relative_influence)
from .simlab import ScenarioConfig, StudyResult, gen_data, roc_auc, run_study
from .tree import Tree, TreeGrower, fit_tree, predict_tree, tree_influence
from .tuning import CvResult, cv_select_trees, mv_mse, test_select_trees

__all__ = [n for n in dir() if not n.startswith("_")]
