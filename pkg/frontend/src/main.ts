import { ElicitationApp } from "./app.js";

document.addEventListener("DOMContentLoaded", () => {
  const app = new ElicitationApp({ doc: document });
  app.start();
});
