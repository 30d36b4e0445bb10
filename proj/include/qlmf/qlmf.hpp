#pragma once

#include "qlmf/core/errors.hpp"
#include "qlmf/core/parallel.hpp"
#include "qlmf/core/seeding.hpp"
#include "qlmf/dmft/fixed_point.hpp"
#include "qlmf/dmft/profile.hpp"
#include "qlmf/dmft/quadrature.hpp"
#include "qlmf/dmft/stability.hpp"
#include "qlmf/dopri5.hpp"
#include "qlmf/dynamics.hpp"
#include "qlmf/experiments/config.hpp"
#include "qlmf/experiments/experiments.hpp"
#include "qlmf/experiments/io.hpp"
#include "qlmf/random_games.hpp"
