#pragma once

#include "core.hpp"
#include "cox.hpp"
#include "bayes.hpp"
#include "updating.hpp"
#include "metrics.hpp"
#include "simulation.hpp"
#include "io.hpp"
#include "study.hpp"
