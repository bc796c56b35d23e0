#pragma once

#include "rsr/common.hpp"
#include "rsr/spectral.hpp"
#include "rsr/estimators.hpp"
#include "rsr/diagnostics.hpp"
#include "rsr/generators.hpp"
#include "rsr/io.hpp"
#include "rsr/harness.hpp"
