#pragma once

#include "cpdist/changepoint.hpp"
#include "cpdist/clustering.hpp"
#include "cpdist/errors.hpp"
#include "cpdist/io.hpp"
#include "cpdist/matrix_analysis.hpp"
#include "cpdist/pipeline.hpp"
#include "cpdist/rng.hpp"
#include "cpdist/set_metrics.hpp"
#include "cpdist/simulation.hpp"
