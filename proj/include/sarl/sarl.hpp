#pragma once

#include "sarl/core.hpp"
#include "sarl/rng.hpp"
#include "sarl/mdp.hpp"
#include "sarl/spectral.hpp"
#include "sarl/schedule.hpp"
#include "sarl/learners.hpp"
#include "sarl/ode.hpp"
#include "sarl/diagnostics.hpp"
#include "sarl/environments.hpp"
#include "sarl/io.hpp"
#include "sarl/experiment.hpp"
