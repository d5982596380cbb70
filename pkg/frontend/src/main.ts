import { ApiClient } from "./api.js";
import { App } from "./app.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

// Served by the session service under /ui, so the API lives at the origin root.
const app = new App(new ApiClient(""), root);
void app.boot();
