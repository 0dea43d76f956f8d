#pragma once

#include "capsroute/analysis.hpp"
#include "capsroute/bench.hpp"
#include "capsroute/dataset.hpp"
#include "capsroute/errors.hpp"
#include "capsroute/master.hpp"
#include "capsroute/routing.hpp"
#include "capsroute/stats.hpp"
#include "capsroute/storage.hpp"
#include "capsroute/synth.hpp"
#include "capsroute/tensor.hpp"
