#pragma once

#include "pdeconv/core.hpp"
#include "pdeconv/dictionary.hpp"
#include "pdeconv/experiment.hpp"
#include "pdeconv/io.hpp"
#include "pdeconv/kernel.hpp"
#include "pdeconv/metrics.hpp"
#include "pdeconv/model.hpp"
#include "pdeconv/rng.hpp"
#include "pdeconv/simulate.hpp"
#include "pdeconv/solvers.hpp"
