#pragma once

#include <bistatic/core.hpp>
#include <bistatic/model.hpp>
#include <bistatic/csi.hpp>
#include <bistatic/pencil.hpp>
#include <bistatic/cnn.hpp>
#include <bistatic/crb.hpp>
#include <bistatic/mle.hpp>
#include <bistatic/complexity.hpp>
#include <bistatic/harness.hpp>
