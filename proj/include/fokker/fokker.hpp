#pragma once

#include "fokker/action.hpp"
#include "fokker/constraint_state.hpp"
#include "fokker/error.hpp"
#include "fokker/grid.hpp"
#include "fokker/kernel.hpp"
#include "fokker/modified.hpp"
#include "fokker/propagator.hpp"
#include "fokker/quadrature.hpp"
#include "fokker/random.hpp"
#include "fokker/sampling.hpp"
#include "fokker/vec.hpp"
