#pragma once

// Umbrella header for the simulation and solver library. The config and
// command layers (config.hpp, cli.hpp) are separate because they pull in JSON.

#include "superbranch/age.hpp"
#include "superbranch/cumulant.hpp"
#include "superbranch/engine.hpp"
#include "superbranch/errors.hpp"
#include "superbranch/hashing.hpp"
#include "superbranch/mechanism.hpp"
#include "superbranch/moment.hpp"
#include "superbranch/particle_laws.hpp"
#include "superbranch/population.hpp"
#include "superbranch/replicates.hpp"
#include "superbranch/rng.hpp"
#include "superbranch/space.hpp"
#include "superbranch/stats.hpp"
#include "superbranch/zoo/age_reproduction.hpp"
#include "superbranch/zoo/controlled_immigration.hpp"
#include "superbranch/zoo/ktype.hpp"
#include "superbranch/zoo/mass_structured.hpp"
#include "superbranch/zoo/multilevel.hpp"
#include "superbranch/zoo/rebirth.hpp"
#include "superbranch/zoo/registry.hpp"
