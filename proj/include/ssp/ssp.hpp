#pragma once

#include "ssp/agents.hpp"
#include "ssp/confidence.hpp"
#include "ssp/envlab.hpp"
#include "ssp/errors.hpp"
#include "ssp/evaluation.hpp"
#include "ssp/harness.hpp"
#include "ssp/io.hpp"
#include "ssp/mdp.hpp"
#include "ssp/omd.hpp"
#include "ssp/planning.hpp"
#include "ssp/rng.hpp"
