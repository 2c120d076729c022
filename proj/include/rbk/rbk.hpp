#ifndef RBK_RBK_HPP
#define RBK_RBK_HPP

#include "rbk/bench.hpp"
#include "rbk/covariance.hpp"
#include "rbk/csv.hpp"
#include "rbk/detrend.hpp"
#include "rbk/error.hpp"
#include "rbk/estimation.hpp"
#include "rbk/geometry.hpp"
#include "rbk/linalg.hpp"
#include "rbk/prediction.hpp"
#include "rbk/random.hpp"
#include "rbk/simulation.hpp"
#include "rbk/sre_model.hpp"

#endif  // RBK_RBK_HPP
