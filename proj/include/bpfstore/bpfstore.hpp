#pragma once

#include "bpfstore/abi.hpp"
#include "bpfstore/appcodes.hpp"
#include "bpfstore/assembler.hpp"
#include "bpfstore/benchmark.hpp"
#include "bpfstore/bytecode.hpp"
#include "bpfstore/client.hpp"
#include "bpfstore/device.hpp"
#include "bpfstore/latency.hpp"
#include "bpfstore/net.hpp"
#include "bpfstore/oracles.hpp"
#include "bpfstore/protocol.hpp"
#include "bpfstore/server.hpp"
#include "bpfstore/verifier.hpp"
#include "bpfstore/vm.hpp"
