#include <thread>

#include <gtest/gtest.h>

#include "pillcase/http_api.hpp"

using namespace pillcase;
using nlohmann::json;

namespace {

class HttpApi : public ::testing::Test {
protected:
    void SetUp() override {
        http::mount(server_, gw_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        ASSERT_GT(port_, 0);
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    }

    void TearDown() override {
        server_.stop();
        thread_.join();
    }

    json post(const std::string& path, const json& body, int want) {
        auto res = client_->Post(path, body.dump(), "application/json");
        return check(res, want);
    }
    json put(const std::string& path, const json& body, int want) {
        auto res = client_->Put(path, body.dump(), "application/json");
        return check(res, want);
    }
    json get(const std::string& path, int want) { return check(client_->Get(path), want); }

    json check(const httplib::Result& res, int want) {
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, want) << res->body;
        EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
        return json::parse(res->body);
    }

    std::string quiet_device(int pills) {
        const auto r = post("/devices",
                            {{"pills", pills}, {"unit_mass", 4.4}, {"noise_sigma", 0.0}, {"session_tare_range", 0.0}},
                            201);
        return r.at("device_id").get<std::string>();
    }

    void take(const std::string& id, int n) {
        post("/devices/" + id + "/action", {{"action", "open"}}, 200);
        if (n > 0) post("/devices/" + id + "/action", {{"action", "remove"}, {"n", n}}, 200);
        post("/devices/" + id + "/action", {{"action", "close"}}, 200);
    }

    Gateway gw_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::unique_ptr<httplib::Client> client_;
};

} // namespace

TEST_F(HttpApi, CatalogAndDeviceList) {
    const auto cat = get("/catalog", 200);
    ASSERT_EQ(cat["medicines"].size(), 1u);
    EXPECT_EQ(cat["medicines"][0]["medicine_id"], "tylenol");
    EXPECT_EQ(cat["medicines"][0]["unit_weight"], 4.45);
    EXPECT_EQ(get("/devices", 200)["devices"], json::array());
    const auto id = quiet_device(5);
    EXPECT_EQ(get("/devices", 200)["devices"], json::array({id}));
}

TEST_F(HttpApi, RegisterReturnsStatus) {
    const auto r = post("/devices", {{"pills", 9}, {"medicine_id", "tylenol"}, {"recommended_dose", 2}}, 201);
    EXPECT_EQ(r["device_id"], "1");
    EXPECT_EQ(r["status"]["pill_count"], 9);
    EXPECT_EQ(r["status"]["lid"], "closed");
    EXPECT_EQ(r["status"]["calibrated"], false);
    EXPECT_EQ(r["status"]["prescription"]["recommended_dose"], 2);
    EXPECT_TRUE(r["status"]["tag_weight"].is_string());
}

TEST_F(HttpApi, FullScanFlow) {
    const auto id = quiet_device(5);
    const auto cal = post("/devices/" + id + "/scan", json::object(), 200);
    EXPECT_EQ(cal["calibration"], true);
    EXPECT_EQ(cal["current_weight"], "22.0");
    EXPECT_FALSE(cal.contains("verdict"));

    take(id, 1);
    const auto one = post("/devices/" + id + "/scan", json::object(), 200);
    EXPECT_EQ(one["calibration"], false);
    EXPECT_EQ(one["doses_taken"], 1);
    EXPECT_EQ(one["previous_weight"], "22.0");
    EXPECT_EQ(one["current_weight"], "17.6");
    EXPECT_EQ(one["verdict"]["kind"], "correct");
    EXPECT_EQ(one["message"], "Correct dose");

    take(id, 2);
    const auto two = post("/devices/" + id + "/scan", json::object(), 200);
    EXPECT_EQ(two["doses_taken"], 2);
    EXPECT_EQ(two["verdict"]["kind"], "exceed");
    EXPECT_EQ(two["verdict"]["count"], 1);
    EXPECT_EQ(two["message"], "You are taking 1 more than what should");

    const auto events = get("/devices/" + id + "/events", 200)["events"];
    ASSERT_EQ(events.size(), 3u);
    EXPECT_EQ(events[0]["kind"], "calibration");
    EXPECT_EQ(events[2]["verdict"]["kind"], "exceed");
    const auto since = get("/devices/" + id + "/events?since=2", 200)["events"];
    ASSERT_EQ(since.size(), 1u);
    EXPECT_EQ(since[0]["event_id"], 3);
}

TEST_F(HttpApi, ErrorMapping) {
    const auto nf = get("/devices/99/status", 404);
    EXPECT_EQ(nf["error"]["code"], "not_found");
    EXPECT_FALSE(nf["error"]["message"].get<std::string>().empty());

    const auto id = quiet_device(2);
    post("/devices/" + id + "/action", {{"action", "open"}}, 200);
    EXPECT_EQ(post("/devices/" + id + "/scan", json::object(), 409)["error"]["code"], "scan_rejected");
    EXPECT_EQ(post("/devices/" + id + "/action", {{"action", "remove"}, {"n", 5}}, 409)["error"]["code"],
              "underflow");
    EXPECT_EQ(post("/devices/" + id + "/action", {{"action", "fly"}}, 400)["error"]["code"], "validation_error");
    EXPECT_EQ(post("/devices/" + id + "/action", {{"action", "remove"}, {"n", 0}}, 400)["error"]["code"],
              "invalid_argument");
    post("/devices/" + id + "/action", {{"action", "close"}}, 200);
    EXPECT_EQ(post("/devices/" + id + "/action", {{"action", "remove"}, {"n", 1}}, 409)["error"]["code"],
              "lid_closed");

    EXPECT_EQ(post("/devices", {{"pills", -3}}, 400)["error"]["code"], "validation_error");
    EXPECT_EQ(post("/devices", {{"medicine_id", "nope"}}, 400)["error"]["code"], "validation_error");
    EXPECT_EQ(get("/devices/" + id + "/events?since=abc", 400)["error"]["code"], "validation_error");

    auto res = client_->Post("/devices", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(json::parse(res->body)["error"]["code"], "validation_error");
}

TEST_F(HttpApi, BlankTagScanError) {
    const auto r = post("/devices", {{"pills", 3}, {"prime", false}}, 201);
    const std::string id = r["device_id"];
    EXPECT_TRUE(r["status"]["tag_weight"].is_null());
    const auto err = post("/devices/" + id + "/scan", json::object(), 422);
    EXPECT_EQ(err["error"]["code"], "scan_error");
}

TEST_F(HttpApi, PrescriptionChange) {
    const auto id = quiet_device(10);
    post("/devices/" + id + "/scan", json::object(), 200);
    const auto same = put("/devices/" + id + "/prescription", {{"medicine_id", "tylenol"}, {"recommended_dose", 1}}, 200);
    EXPECT_EQ(same["calibration_required"], false);
    const auto changed =
        put("/devices/" + id + "/prescription", {{"medicine_id", "tylenol"}, {"recommended_dose", 2}}, 200);
    EXPECT_EQ(changed["calibration_required"], true);
    EXPECT_EQ(changed["prescription"]["recommended_dose"], 2);
    EXPECT_EQ(post("/devices/" + id + "/scan", json::object(), 200)["calibration"], true);

    const auto custom = put("/devices/" + id + "/prescription",
                            {{"medicine_id", "vitamin"}, {"medicine_name", "Vitamin D"}, {"unit_weight", 0.8}}, 200);
    EXPECT_EQ(custom["prescription"]["unit_weight"], 0.8);
    EXPECT_EQ(put("/devices/" + id + "/prescription", {{"recommended_dose", 1}}, 400)["error"]["code"],
              "validation_error");
    EXPECT_EQ(put("/devices/" + id + "/prescription", {{"medicine_id", "tylenol"}, {"recommended_dose", 0}}, 400)
                  ["error"]["code"],
              "validation_error");
    EXPECT_EQ(put("/devices/77/prescription", {{"medicine_id", "tylenol"}}, 404)["error"]["code"], "not_found");
}

TEST_F(HttpApi, ActionReturnsStatusAndAdvanceDrainsBattery) {
    const auto id = quiet_device(4);
    const auto opened = post("/devices/" + id + "/action", {{"action", "open"}}, 200);
    EXPECT_EQ(opened["lid"], "open");
    const double before = opened["battery_mah"];
    const auto later = post("/devices/" + id + "/action", {{"action", "advance"}, {"seconds", 5}}, 200);
    EXPECT_LT(later["battery_mah"].get<double>(), before);
    EXPECT_DOUBLE_EQ(later["clock"].get<double>(), 5.0);
    const auto added = post("/devices/" + id + "/action", {{"action", "add"}, {"n", 3}}, 200);
    EXPECT_EQ(added["pill_count"], 7);
    EXPECT_EQ(added["tag_weight"], "30.8");
}

TEST_F(HttpApi, CorsPreflight) {
    auto res = client_->Options("/devices");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 204);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST(HttpStatus, Mapping) {
    EXPECT_EQ(http::status_for(ErrorCode::not_found), 404);
    EXPECT_EQ(http::status_for(ErrorCode::validation), 400);
    EXPECT_EQ(http::status_for(ErrorCode::scan_rejected), 409);
    EXPECT_EQ(http::status_for(ErrorCode::io), 500);
    EXPECT_EQ(http::status_for(ErrorCode::scan_error), 422);
}
