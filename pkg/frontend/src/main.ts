import { mountApp } from './app';
import './style.css';

const root = document.getElementById('app');
if (!root) throw new Error('missing #app mount point');

// same-origin by default; override with e.g. VITE_API_BASE=http://127.0.0.1:8000
const app = mountApp(root, import.meta.env.VITE_API_BASE ?? '');
void app.start();
