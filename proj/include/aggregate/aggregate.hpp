#pragma once

#include "aggregate/cache.hpp"
#include "aggregate/connectivity.hpp"
#include "aggregate/delaunay.hpp"
#include "aggregate/density.hpp"
#include "aggregate/elasticity.hpp"
#include "aggregate/element.hpp"
#include "aggregate/errors.hpp"
#include "aggregate/geometry.hpp"
#include "aggregate/gradient_check.hpp"
#include "aggregate/grid.hpp"
#include "aggregate/io.hpp"
#include "aggregate/mma.hpp"
#include "aggregate/optimizer.hpp"
#include "aggregate/problem.hpp"
#include "aggregate/rotation.hpp"
#include "aggregate/scene.hpp"
#include "aggregate/sensitivity.hpp"
#include "aggregate/skeleton.hpp"
