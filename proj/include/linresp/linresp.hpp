#pragma once

#include "linresp/error.hpp"
#include "linresp/experiment.hpp"
#include "linresp/io.hpp"
#include "linresp/maps.hpp"
#include "linresp/measure.hpp"
#include "linresp/response.hpp"
#include "linresp/tangency.hpp"
#include "linresp/tangent.hpp"
