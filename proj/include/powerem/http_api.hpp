#pragma once

#include <string>

namespace httplib {
class Server;
}

namespace powerem {

class DecisionService;

// Registers the /api routes on `server`. Every response, including errors and
// OPTIONS preflights, carries CORS headers for `cors_origin`.
void mount_api(httplib::Server& server, const DecisionService& service, const std::string& cors_origin = "*");

} // namespace powerem
