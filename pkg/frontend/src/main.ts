import { ControlClient } from "./client.js";
import { Panel } from "./panel.js";

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");

const scheme = location.protocol === "https:" ? "wss" : "ws";
const client = new ControlClient(`${scheme}://${location.host}/ws`);
const panel = new Panel(root, client);
panel.start();

window.addEventListener("beforeunload", () => panel.stop());
