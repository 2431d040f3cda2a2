#pragma once

#include "rampc/poly.hpp"
#include "rampc/sdp.hpp"
#include "rampc/sos.hpp"
#include "rampc/lp.hpp"
#include "rampc/closed_loop.hpp"
#include "rampc/gbf.hpp"
#include "rampc/nlp.hpp"
#include "rampc/scenario.hpp"
#include "rampc/mpc.hpp"
#include "rampc/config.hpp"
#include "rampc/loop.hpp"
