#pragma once

#include "kpcodec/bitio.hpp"
#include "kpcodec/codec.hpp"
#include "kpcodec/entropy.hpp"
#include "kpcodec/errors.hpp"
#include "kpcodec/framecontrol.hpp"
#include "kpcodec/geometry.hpp"
#include "kpcodec/harness.hpp"
#include "kpcodec/io.hpp"
#include "kpcodec/kpquant.hpp"
#include "kpcodec/matching.hpp"
#include "kpcodec/model.hpp"
