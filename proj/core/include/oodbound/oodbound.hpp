#pragma once

#include "oodbound/boundary.hpp"
#include "oodbound/dataset.hpp"
#include "oodbound/detector.hpp"
#include "oodbound/error.hpp"
#include "oodbound/evaluation.hpp"
#include "oodbound/gradcheck.hpp"
#include "oodbound/io.hpp"
#include "oodbound/metric_learning.hpp"
